import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundtalk.agents import ModelConfig, build_models, history_tokens
from groundtalk.env import EnvConfig, ObjectSpec, Scene, generate_corpus, generate_scene, object_features

ENV = EnvConfig()
MC = ModelConfig(hidden=16, embedding=8)


@pytest.fixture(scope="module")
def models():
    return build_models(ENV, MC, seed=3)


def rounds_of(corpus_rec):
    return [(r.question, r.answer) for r in corpus_rec.rounds]


def test_vocabulary_and_heads(models):
    q, a, g = models
    assert q.params["out.W"].data.shape[1] == len(q.vocab)
    assert a.params["head.W"].data.shape[1] == 3
    assert a.params["score.W"].data.shape[1] == 1


def test_empty_history_uses_initial_state(models):
    q, _, _ = models
    s = generate_scene(0)
    h_enc, ctx, s0, w = q.context([[]], [s])
    assert np.all(h_enc.data == 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0)


def test_rl_truncation_keeps_last_two_rounds(models):
    q, _, _ = models
    rec = max(generate_corpus(30, rng_seed=1), key=lambda r: len(r.rounds))
    rounds = rounds_of(rec)
    assert len(rounds) >= 3
    full = history_tokens(q.vocab, rounds, truncate=2)
    tail = history_tokens(q.vocab, rounds[-2:], truncate=2)
    assert full == tail
    a = q.context([full], [rec.scene])[1].data
    b = q.context([tail], [rec.scene])[1].data
    assert np.array_equal(a, b)
    assert history_tokens(q.vocab, rounds) != full


def test_single_object_attention_returns_its_projection(models):
    q, _, _ = models
    s = Scene((ObjectSpec(0, "cup", "red", "large", (1, 2)),), 0, (4, 4))
    _, ctx, _, w = q.context([[]], [s])
    p = q.params
    key = np.tanh(object_features(s, ENV) @ p["obj.W"].data + p["obj.b"].data)
    np.testing.assert_allclose(ctx.data[0], key[0], atol=1e-15)
    assert w[0, 0] == 1.0


def test_sample_logprobs_match_forced_decode(models):
    q, _, _ = models
    scenes = [generate_scene(i) for i in range(8)]
    hist = [[] for _ in scenes]
    rngs = [np.random.default_rng(i) for i in range(8)]
    toks, term, logps = q.sample(hist, scenes, rngs)
    targets = [t + ([k] if k is not None else []) for t, k in zip(toks, term)]
    _, loglik, _, _ = q.nll(hist, scenes, targets)
    for lp, ll in zip(logps, loglik):
        assert all(x <= 0 for x in lp)
        assert abs(sum(lp) - ll) < 1e-10


def test_sampling_is_deterministic(models):
    q, _, _ = models
    s = [generate_scene(5)]
    a = q.sample([[]], s, [np.random.default_rng(9)])
    b = q.sample([[]], s, [np.random.default_rng(9)])
    assert a == b


def test_max_length_terminates(models):
    q, _, _ = models
    toks, term, _ = q.sample([[]], [generate_scene(1)], [np.random.default_rng(0)])
    assert len(toks[0]) <= MC.max_question_len


def test_delta_distribution_is_deterministic():
    q, _, _ = build_models(ENV, MC, seed=0)
    q.params["out.b"].data[q.vocab.eoq] = 1e3
    for i in range(5):
        toks, term, lps = q.sample([[]], [generate_scene(i)], [np.random.default_rng(i)])
        assert toks == [[]] and term == [q.vocab.eoq]
        assert lps[0][0] == pytest.approx(0.0, abs=1e-12)


def test_answer_logprob_and_score(models):
    _, a, _ = models
    rec = generate_corpus(4, rng_seed=2)
    qs = [r.question for lg in rec for r in lg.rounds]
    feats = np.stack([object_features(lg.scene, ENV)[lg.scene.target_index] for lg in rec for _ in lg.rounds])
    rngs = [np.random.default_rng(i) for i in range(len(qs))]
    ans, lps, b = a.answer(qs, feats, rngs)
    logits, _ = a.forward(a.encode_questions(qs), feats)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ref = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = [["yes", "no", "na"].index(x) for x in ans]
    np.testing.assert_allclose(lps, ref[np.arange(len(qs)), idx], atol=1e-10)
    assert np.all(b >= 0)
    again = a.answer(qs, feats, [np.random.default_rng(i) for i in range(len(qs))])
    assert again[0] == ans


@given(st.integers(0, 2**31), st.floats(-5, 5))
@settings(max_examples=50, deadline=None)
def test_score_branch_is_nonnegative(seed, shift):
    _, a, _ = build_models(ENV, MC, seed=1)
    a.params["score.b"].data[...] = shift
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(3, ENV.feature_dim))
    _, _, b = a.answer([("is", "it", "red", "?")] * 3, feats, [rng] * 3)
    assert np.all(b >= 0)


def test_guesser_single_object_is_certain(models):
    _, _, g = models
    s = Scene((ObjectSpec(4, "cup", "red", "large", (1, 2)),), 4, (4, 4))
    probs, ids = g.guess([[]], [s])
    assert probs[0].tolist() == [1.0] and ids == [4]


def test_guesser_one_logit_per_object(models):
    _, _, g = models
    scenes = [generate_scene(i, EnvConfig(n_obj_min=n, n_obj_max=n)) for i, n in enumerate([1, 3, 8])]
    logits, mask = g.logits([[], [], []], scenes)
    assert mask.sum(axis=1).tolist() == [1, 3, 8]
    probs, _ = g.guess([[], [], []], scenes)
    assert [len(p) for p in probs] == [1, 3, 8]


@given(st.integers(0, 10_000), st.randoms())
@settings(max_examples=60, deadline=None)
def test_guesser_permutation_equivariance(seed, rnd):
    _, _, g = build_models(ENV, MC, seed=2)
    rec = generate_corpus(1, rng_seed=seed)[0]
    rounds = rounds_of(rec)
    order = list(range(len(rec.scene.objects)))
    rnd.shuffle(order)
    p, gid = g.guess([rounds], [rec.scene])
    pp, gid2 = g.guess([rounds], [rec.scene.permuted(order)])
    assert abs(p[0].sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(pp[0], p[0][order], rtol=0, atol=1e-12)
    if np.sort(p[0])[-1] - np.sort(p[0])[-2] > 1e-9:
        assert gid == gid2


def test_checkpoint_round_trip_is_byte_identical(tmp_path, models):
    q, a, g = models
    for m in (q, a, g):
        p1, p2 = tmp_path / f"{m.kind}1.ckpt", tmp_path / f"{m.kind}2.ckpt"
        m.save(p1)
        type(m).load(p1, m.vocab).save(p2)
        assert p1.read_bytes() == p2.read_bytes()
