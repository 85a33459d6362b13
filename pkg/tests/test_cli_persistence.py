import json

import numpy as np
import pytest

from groundtalk import cli
from groundtalk import config as cfgmod
from groundtalk.agents import ModelConfig
from groundtalk.config import RunConfig, load_config, resolve, run_dir
from groundtalk.env import EnvConfig, Vocabulary, generate_scene, oracle_answer, scene_stream
from groundtalk.errors import ConfigurationError
from groundtalk.play import SessionAborted, oracle_session, play, run_session, session_rng
from groundtalk.records import read_jsonl
from groundtalk.runs import RunDir, replay_file
from groundtalk.training import Agents, PretrainConfig, TrainConfig

TINY = RunConfig(
    model=ModelConfig(hidden=16, embedding=8),
    pretrain=PretrainConfig(epochs=1, batch_size=32, learning_rate=1e-2),
    train=TrainConfig(batch_size=16, learning_rate=1e-3, epochs=2, eval_scenes=40),
    corpus_size=300,
)


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(TINY.to_json())
    return p


@pytest.fixture(scope="module")
def base(tmp_path_factory, tiny_config):
    path = tmp_path_factory.mktemp("runs") / "base"
    assert cli.main(["pretrain", "--run", str(path), "--config", str(tiny_config)]) == 0
    return path


@pytest.fixture(scope="module")
def trained(base, tmp_path_factory):
    path = tmp_path_factory.mktemp("runs") / "qag"
    assert cli.main(["train", "--run", str(path), "--init", str(base), "--tune", "q,a,g", "--prune"]) == 0
    return path


# ---------------------------------------------------------------- config


def test_config_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(TINY.to_json())
    assert load_config(p) == TINY
    assert load_config(p).to_json() == TINY.to_json()


def test_flag_beats_file_beats_default(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(RunConfig(seed=7, tune="q", train=TrainConfig(epochs=3)).to_json())
    assert resolve().seed == 0
    assert resolve(p).seed == 7 and resolve(p).train.epochs == 3
    cfg = resolve(p, seed=9, epochs=4, tune=None)
    assert cfg.seed == 9 and cfg.train.epochs == 4 and cfg.tune == "q"


def test_malformed_config_is_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(bad)
    bad.write_text(json.dumps({"train": {"epochs": 3, "momentum": 0.9}}))
    with pytest.raises(ConfigurationError):
        load_config(bad)
    bad.write_text(json.dumps({"env": {"grid_w": 2, "grid_h": 2}}))
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert cli.main(["gen-corpus", "--run", str(tmp_path / "r"), "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "malformed config" in capsys.readouterr().err


def test_home_variable_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cfgmod.HOME_ENV, str(tmp_path))
    assert run_dir(RunConfig(), "exp") == tmp_path / "exp"
    assert run_dir(RunConfig(seed=3)) == tmp_path / "run-seed3"
    assert run_dir(RunConfig(), str(tmp_path / "x" / "y")) == tmp_path / "x" / "y"


# ---------------------------------------------------------------- run directory


def test_pretrain_writes_run_layout(base):
    run = RunDir(base)
    assert run.read_config() == TINY
    assert run.read_vocab().hash == Vocabulary.for_config(EnvConfig()).hash
    for name in ("questioner", "answerer", "guesser"):
        assert run.epochs(name) == [0]
    summary = json.loads((base / "reports" / "pretrain.json").read_text())
    assert summary["consistency_ceiling"] >= 0.95


def test_training_writes_checkpoints_logs_reports(trained):
    run = RunDir(trained)
    assert run.epochs("questioner") == [0, 1, 2]
    report = run.final_report()
    logs = read_jsonl(run.log_path(2))
    assert len(logs) == report.n_episodes == 40
    assert report.success_rate == pytest.approx(np.mean([lg.reward for lg in logs]))
    assert logs[0].checkpoints["guesser"]["file"] == "checkpoints/guesser.2.ckpt"


def test_replay_reproduces_logged_rewards(trained, capsys):
    n, bad = replay_file(RunDir(trained).log_path(2))
    assert n == 40 and bad == 0
    assert cli.main(["replay", str(RunDir(trained).log_path(1))]) == 0
    assert "0 reward mismatches" in capsys.readouterr().out


def test_replay_detects_tampered_checkpoint(trained, tmp_path):
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(trained, copy)
    ckpt = RunDir(copy).checkpoint_path("guesser", 2)
    data = bytearray(ckpt.read_bytes())
    data[-1] ^= 1
    ckpt.write_bytes(bytes(data))
    assert cli.main(["replay", str(RunDir(copy).log_path(2))]) == cli.EXIT_CHECKPOINT


def test_checkpoint_save_load_save_is_byte_identical(trained, tmp_path):
    run = RunDir(trained)
    agents, _ = run.load_agents()
    for name in ("questioner", "answerer", "guesser"):
        out = tmp_path / f"{name}.ckpt"
        getattr(agents, name).save(out)
        assert out.read_bytes() == run.checkpoint_path(name, run.latest(name)).read_bytes()


def test_evaluate_twice_is_byte_identical(trained, capsys):
    args = ["evaluate", "--run", str(trained), "--scenes", "30", "--tag", "twice"]
    assert cli.main(args) == 0
    first = RunDir(trained).report_path("twice").read_bytes()
    first_logs = RunDir(trained).log_path("twice").read_bytes()
    assert cli.main(args) == 0
    assert RunDir(trained).report_path("twice").read_bytes() == first
    assert RunDir(trained).log_path("twice").read_bytes() == first_logs
    capsys.readouterr()


def test_missing_checkpoint_exit_code(tmp_path, capsys):
    empty = tmp_path / "empty"
    RunDir(empty).create()
    assert cli.main(["evaluate", "--run", str(empty)]) == cli.EXIT_MISSING
    assert "missing checkpoint" in capsys.readouterr().err


def test_vocabulary_mismatch_exit_code(base, tmp_path, capsys):
    other = tmp_path / "other.json"
    other.write_text(RunConfig(env=EnvConfig(n_colors=4), model=TINY.model, train=TINY.train).to_json())
    code = cli.main(["train", "--run", str(tmp_path / "r"), "--init", str(base), "--config", str(other), "--tune", "q"])
    assert code == cli.EXIT_VOCAB
    assert "vocabulary mismatch" in capsys.readouterr().err


def test_train_without_tuning_is_a_config_error(base, tmp_path):
    assert cli.main(["train", "--run", str(tmp_path / "r"), "--init", str(base)]) == cli.EXIT_CONFIG


def test_compare_command(trained, base, tmp_path, capsys):
    a = tmp_path / "a"
    assert cli.main(["train", "--run", str(a), "--init", str(base), "--tune", "q", "--epochs", "1"]) == 0
    out = tmp_path / "cmp.json"
    assert cli.main(["compare", str(a), str(trained), "--json", str(out)]) == 0
    text = capsys.readouterr().out
    assert "RL^Q" in text and "IRL-prune^QAG" in text
    assert set(json.loads(out.read_text())["table"]) == {"RL^Q", "IRL-prune^QAG"}


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--seeds", "2"]) == 0
    assert "all passed" in capsys.readouterr().out


# ---------------------------------------------------------------- play


@pytest.fixture(scope="module")
def small_agents():
    return Agents.fresh(EnvConfig(), ModelConfig(hidden=16, embedding=8), seed=5)


def scripted_input(lines):
    it = iter(lines)

    def read(prompt):
        try:
            return next(it)
        except StopIteration:
            raise EOFError from None

    return read


def test_oracle_answers_match_oracle_session(small_agents):
    scene = scene_stream(0, "play", 1, EnvConfig())[0]
    ref = oracle_session(small_agents, scene, session_rng(0, 0))
    answers = iter(oracle_answer(r.question, scene).value for r in ref.rounds)
    out = []
    log = play(small_agents, scene, "answerer", session_rng(0, 0), read=lambda p: next(answers), write=out.append)
    assert [(r.question, r.answer) for r in log.rounds] == [(r.question, r.answer) for r in ref.rounds]
    assert log.guess_id == ref.guess_id and log.role == "human-answerer"
    assert len(log.rounds) <= EnvConfig().rounds


def test_single_object_scene_guess_succeeds(small_agents):
    env = EnvConfig(n_obj_min=1, n_obj_max=1)
    scene = generate_scene(3, env)
    log = play(small_agents, scene, "guesser", session_rng(0, 1), read=scripted_input([str(scene.target_id)]), write=lambda s: None)
    assert log.reward == 1 and log.role == "human-guesser"


def test_invalid_input_reprompts(small_agents):
    scene = scene_stream(0, "play", 1, EnvConfig())[0]
    out = []
    log = play(small_agents, scene, "guesser", session_rng(0, 2), read=scripted_input(["banana", "99", str(scene.target_id)]),
               write=out.append)
    assert log.reward == 1
    assert sum("not understood" in s for s in out) == 2


def test_end_of_input_aborts(small_agents):
    scene = scene_stream(0, "play", 1, EnvConfig())[0]
    out = []
    assert play(small_agents, scene, "guesser", session_rng(0, 3), read=scripted_input([]), write=out.append) is None
    assert out[-1] == "session aborted"


def test_session_stays_within_round_limit(small_agents):
    for i, scene in enumerate(scene_stream(1, "play", 20, EnvConfig())):
        log = run_session(small_agents, scene, session_rng(1, i), answer_fn=lambda q: "no")
        assert len(log.rounds) <= EnvConfig().rounds
        assert all(r.answer == "no" for r in log.rounds)


def test_cli_play_appends_transcript(trained, monkeypatch, capsys):
    scene = scene_stream(0, "play", 1, EnvConfig())[0]
    monkeypatch.setattr("builtins.input", scripted_input([str(scene.target_id)]))
    assert cli.main(["play", "--run", str(trained), "--role", "guesser"]) == 0
    logs = read_jsonl(trained / "logs" / "play_guesser.jsonl")
    assert logs[-1].role == "human-guesser" and logs[-1].reward == 1
    capsys.readouterr()


def test_unknown_role_rejected(small_agents):
    with pytest.raises(ValueError):
        play(small_agents, generate_scene(0), "questioner", session_rng(0, 0))


def test_session_aborted_is_exception():
    assert issubclass(SessionAborted, Exception)
