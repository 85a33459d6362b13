import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundtalk.env import Dialogue, EnvConfig, all_templates, generate_corpus
from groundtalk.errors import ConfigurationError
from groundtalk.pruning import (
    NEAR_DUPLICATE,
    REPETITION,
    PruneConfig,
    detect_near_duplicate,
    detect_repetition,
    overlap_coefficient,
    prune_dialogue,
)

q = str.split


def test_front_left_example_is_repetition():
    assert detect_repetition(q("is it in front left front left front left ?")) == (True, "front left")


def test_plain_question_not_repetition():
    assert detect_repetition(q("is it a ball ?")) == (False, None)


def test_left_left_left():
    assert detect_repetition(q("left left left ?")) == (True, "left")


def test_two_repeats_are_allowed():
    assert detect_repetition(q("left left ?"))[0] is False


def test_on_the_left_near_duplicate():
    assert detect_near_duplicate(q("on the left ?"), [q("is it on the left ?")]) == (True, 0)


def test_verbatim_repeat_is_duplicate():
    assert overlap_coefficient(q("is it red ?"), q("is it red ?")) == 1.0
    assert detect_near_duplicate(q("is it red ?"), [q("is it a ball ?"), q("is it red ?")]) == (True, 1)


def test_disjoint_questions_not_duplicate():
    assert overlap_coefficient(q("is it red ?"), q("is it a ball ?")) == 0.0
    assert detect_near_duplicate(q("is it red ?"), [q("is it a ball ?")]) == (False, None)


def test_function_words_only_have_zero_overlap():
    assert overlap_coefficient(q("is it ?"), q("is it ?")) == 0.0


def test_distinct_dialogue_kept():
    rounds = [(t.token_sequence, "no") for t in all_templates(EnvConfig())[:5]]
    d, rep = prune_dialogue(rounds)
    assert rep.kept == [0, 1, 2, 3, 4] and not rep.forced_failure
    assert d.rounds == rounds


def test_all_unreadable_forces_failure():
    rounds = [(q("left left left ?"), "yes")] * 4
    d, rep = prune_dialogue(Dialogue(rounds))
    assert d.rounds == [] and rep.forced_failure
    assert [r for _, r, _ in rep.removed] == [REPETITION] * 4


def test_duplicate_of_removed_question_is_not_a_duplicate():
    # round 1 duplicates round 0, round 2 duplicates round 1 only through round 0
    rounds = [(q("is it red ?"), "no"), (q("red ?"), "no"), (q("is it a ball ?"), "yes")]
    _, rep = prune_dialogue(rounds)
    assert rep.kept == [0, 2]
    assert rep.removed == [(1, NEAR_DUPLICATE, 0)]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        PruneConfig(duplicate_overlap_threshold=1.5)
    with pytest.raises(ConfigurationError):
        PruneConfig(max_ngram_repeats=0)


def test_scripted_corpus_removal_rate_is_zero():
    corpus = generate_corpus(2000, rng_seed=11)
    removed = sum(len(prune_dialogue(rec.dialogue())[1].removed) for rec in corpus)
    assert removed == 0


words = st.sampled_from(["is", "it", "a", "red", "ball", "left", "on", "the", "front", "cup", "?"])
questions = st.lists(words, min_size=0, max_size=8)
dialogues = st.lists(st.tuples(questions, st.sampled_from(["yes", "no", "na"])), max_size=6)


@given(dialogues)
@settings(max_examples=300)
def test_report_partitions_rounds(rounds):
    _, rep = prune_dialogue(rounds)
    removed = [i for i, _, _ in rep.removed]
    assert sorted(rep.kept + removed) == list(range(len(rounds)))
    assert rep.kept == sorted(set(rep.kept))
    assert rep.forced_failure == (len(rep.kept) < 1)


@given(dialogues)
@settings(max_examples=300)
def test_prune_is_idempotent(rounds):
    once, _ = prune_dialogue(rounds)
    twice, rep = prune_dialogue(once)
    assert twice.rounds == once.rounds
    assert not rep.removed


@given(dialogues, st.randoms())
@settings(max_examples=200)
def test_answers_never_affect_pruning(rounds, rnd):
    other = [(qq, rnd.choice(["yes", "no", "na"])) for qq, _ in rounds]
    assert prune_dialogue(rounds)[1].kept == prune_dialogue(other)[1].kept


def test_report_round_trip():
    _, rep = prune_dialogue([(q("left left left ?"), "yes"), (q("is it red ?"), "no"), (q("red ?"), "no")])
    from groundtalk.pruning import PruneReport

    assert PruneReport.from_dict(rep.to_dict()) == rep
