"""Command-line entry point: ``groundtalk <subcommand>``.

Typical session::

    groundtalk gen-corpus --run base
    groundtalk pretrain   --run base
    groundtalk train      --run qag-s0 --init base --tune q,a,g --seed 0
    groundtalk train      --run qag-prune-s0 --init base --tune q,a,g --prune --seed 0
    groundtalk evaluate   --run qag-s0 --prune
    groundtalk compare    base qag-s0 qag-prune-s0
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .agents import build_models
from .env import Vocabulary, generate_corpus, scene_stream
from .errors import CheckpointError, ConfigurationError, MissingCheckpoint, TrainingDivergence, VocabularyMismatch
from .metrics import EvalReport, compare_runs, evaluate, evaluate_symbolic, unigram_counts
from .records import read_jsonl, write_jsonl
from .runs import MODELS, RunDir, new_run, replay_file
from .training import (
    Agents,
    fit_score_branch,
    guesser_error,
    guesser_examples,
    pretrain_answerer,
    pretrain_guesser,
    pretrain_questioner,
    train_interactive,
)

log = logging.getLogger("groundtalk")

# exit statuses; each error family gets its own so scripts can tell them apart
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_VOCAB = 4
EXIT_CHECKPOINT = 5
EXIT_DIVERGED = 6


def _resolve(args, run=None, **extra):
    """Flag > file > default. The file is --config, else the run's own config.json."""
    path = args.config
    if path is None and run is not None and run.config_path.exists():
        path = run.config_path
    over = dict(seed=args.seed, **extra)
    return cfgmod.resolve(path, **over)


def _run(args):
    return RunDir(cfgmod.run_dir(cfgmod.RunConfig(seed=args.seed or 0), args.run))


def _corpus(run, cfg):
    if not run.corpus_path.exists():
        log.info("no corpus in %s; generating %d dialogues", run.path, cfg.corpus_size)
        write_jsonl(run.corpus_path, generate_corpus(cfg.corpus_size, cfg.env.rounds, cfg.seed, cfg.env))
    return read_jsonl(run.corpus_path)


# ---------------------------------------------------------------- subcommands


def cmd_gen_corpus(args):
    run = _run(args)
    cfg = _resolve(args, run, corpus_size=args.scenes)
    vocab = Vocabulary.for_config(cfg.env)
    new_run(run.path, cfg, vocab)
    corpus = generate_corpus(cfg.corpus_size, cfg.env.rounds, cfg.seed, cfg.env)
    write_jsonl(run.corpus_path, corpus)
    print(f"wrote {len(corpus)} dialogues to {run.corpus_path}")


def cmd_pretrain(args):
    run = _run(args)
    cfg = _resolve(args, run)
    if args.epochs is not None:
        cfg = replace(cfg, pretrain=replace(cfg.pretrain, epochs=args.epochs))
    vocab = Vocabulary.for_config(cfg.env)
    if run.vocab_path.exists() and run.read_vocab().hash != vocab.hash:
        raise VocabularyMismatch(f"{run.vocab_path} does not match the configured environment")
    new_run(run.path, cfg, vocab)
    corpus = _corpus(run, cfg)
    q, a, g = build_models(cfg.env, cfg.model, cfg.seed, vocab)
    pc = cfg.pretrain_config()
    _, g_err = pretrain_guesser(g, corpus, pc)
    _, a_err = pretrain_answerer(a, corpus, pc)
    _, q_err = pretrain_questioner(q, corpus, pc)
    agents = Agents(q, a, g)
    fit_score_branch(agents, scene_stream(cfg.seed, "score-fit", 2048, cfg.env), seed=cfg.seed)
    ids = run.save_agents(agents, 0)
    held = corpus[: max(1, int(len(corpus) * pc.heldout_fraction))]
    ceiling, _ = evaluate_symbolic([rec.scene for rec in held], cfg.env)
    summary = {
        "format": "groundtalk.pretrain/1",
        "questioner_token_error": q_err,
        "answerer_error": a_err,
        "guesser_error": g_err,
        "guesser_success_scripted": 1.0 - guesser_error(g, guesser_examples(held)),
        "consistency_ceiling": ceiling.success_rate,
        "checkpoints": ids,
    }
    (run.path / "reports" / "pretrain.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(json.dumps(summary, sort_keys=True, indent=2))


def _init_from(run, src):
    """Copy epoch-0 checkpoints and vocabulary from another run directory."""
    for name in MODELS:
        shutil.copyfile(src.checkpoint_path(name, src.latest(name, 0)), run.checkpoint_path(name, 0))
    shutil.copyfile(src.vocab_path, run.vocab_path)
    if src.corpus_path.exists() and not run.corpus_path.exists():
        shutil.copyfile(src.corpus_path, run.corpus_path)
    return src


def cmd_train(args):
    run = _run(args)
    src = RunDir(cfgmod.run_dir(cfgmod.RunConfig(), args.init)) if args.init else None
    path = args.config
    if path is None:
        path = run.config_path if run.config_path.exists() else (src.config_path if src and src.config_path.exists() else None)
    cfg = cfgmod.resolve(path, seed=args.seed, epochs=args.epochs, scenes=args.scenes, tune=args.tune,
                         prune=True if args.prune else None)
    t = cfg.train
    cfg = replace(cfg, train=replace(
        t,
        learning_rate=t.learning_rate if args.lr is None else args.lr,
        batches_per_epoch=t.batches_per_epoch if args.batches_per_epoch is None else args.batches_per_epoch,
    )).validate()
    mask = cfg.mask()
    if not mask.any():
        raise ConfigurationError("train needs --tune with at least one of q, a, g")
    run.create()
    run.clear_training()
    if src is not None:
        _init_from(run, src)
    vocab = run.read_vocab()
    if vocab.hash != Vocabulary.for_config(cfg.env).hash:
        raise VocabularyMismatch(f"{run.vocab_path} does not match the configured environment")
    run.write_config(cfg)
    agents, _ = run.load_agents(epoch=0, vocab=vocab)
    tuned = [n for n, f in zip(MODELS, (mask.tune_q, mask.tune_a, mask.tune_g)) if f]
    best = {"epoch": 0, "success_rate": -1.0}

    def on_epoch(epoch, stats, report, logs):
        ids = run.save_agents(agents, epoch, models=tuned)
        if report is None:
            return
        report.checkpoints = ids
        for lg in logs:
            lg.checkpoints = ids
        run.write_logs(epoch, logs)
        run.write_report(epoch, report)
        if report.success_rate > best["success_rate"]:
            best.update(epoch=epoch, success_rate=report.success_rate, checkpoints=ids)
        (run.path / "reports" / "best.json").write_text(json.dumps(best, sort_keys=True, indent=2) + "\n")
        print(f"epoch {epoch:>3}  reward {stats.mean_reward:.3f}  eval SR {report.success_rate:.3f}")

    series = train_interactive(agents, cfg.train_config(), mask, cfg.prune_config, on_epoch=on_epoch,
                               reference_counts=_reference(run))
    (run.path / "reports" / "training.json").write_text(
        json.dumps({"format": "groundtalk.training/1", "mask": mask.name, "series": [s.to_dict() for s in series]},
                   sort_keys=True, indent=2) + "\n"
    )
    print(f"{mask.name}: best eval SR {best['success_rate']:.3f} at epoch {best['epoch']}")


def _reference(run):
    if not run.corpus_path.exists():
        return None
    return unigram_counts(r.question for rec in read_jsonl(run.corpus_path) for r in rec.rounds)


def cmd_evaluate(args):
    run = _run(args)
    cfg = _resolve(args, run, scenes=args.scenes)
    vocab = run.read_vocab()
    agents, ids = run.load_agents(epoch=args.epoch, vocab=vocab)
    mask = cfg.mask()
    scenes = scene_stream(cfg.train.eval_seed, "rl-eval", cfg.train.eval_scenes, cfg.env)
    report, logs = evaluate(agents, scenes, mask, seed=cfg.seed, prune_config=cfg.prune_config, prune=args.prune,
                            reference_counts=_reference(run), checkpoints=ids)
    tag = args.tag or f"final_seed{cfg.seed}"
    run.write_logs(tag, logs)
    run.write_report(tag, report)
    sys.stdout.write(report.to_json())


def _load_reports(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.append(RunDir(p).final_report())
        else:
            try:
                out.append(EvalReport.from_dict(json.loads(p.read_text())))
            except FileNotFoundError:
                raise MissingCheckpoint(f"no such report: {p}") from None
            except (json.JSONDecodeError, TypeError) as exc:
                raise ConfigurationError(f"malformed report {p}: {exc}") from None
    return out


def cmd_compare(args):
    groups = {}
    for rep in _load_reports(args.reports):
        groups.setdefault(rep.mask, []).append(rep)
    cmp = compare_runs(groups, min_seeds=args.min_seeds)
    sys.stdout.write(cmp.render())
    if args.json:
        Path(args.json).write_text(cmp.to_json())


def cmd_play(args):
    from .play import play, session_rng

    run = _run(args)
    cfg = _resolve(args, run)
    agents, ids = run.load_agents(epoch=args.epoch)
    scenes = scene_stream(cfg.seed, "play", args.scenes or 1, cfg.env)
    transcripts = []
    for i, scene in enumerate(scenes):
        lg = play(agents, scene, args.role, session_rng(cfg.seed, i), prune=cfg.prune, prune_config=cfg.prune_config)
        if lg is None:
            break
        lg.seed, lg.episode, lg.checkpoints = cfg.seed, i, ids
        transcripts.append(lg)
    if transcripts:
        path = run.path / "logs" / f"play_{args.role}.jsonl"
        run.create()
        with open(path, "a") as fh:
            for lg in transcripts:
                fh.write(lg.to_json() + "\n")
        print(f"saved {len(transcripts)} transcript(s) to {path}")


def cmd_gradcheck(args):
    from .checks import run_gradchecks

    results = run_gradchecks(seeds=args.seeds)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print("gradcheck: " + ("all passed" if not failed else f"{len(failed)} failed"))
    return EXIT_FAILED if failed else 0


def cmd_replay(args):
    n, bad = replay_file(args.log, args.run)
    print(f"replayed {n} episodes, {bad} reward mismatches")
    return EXIT_FAILED if bad else 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="groundtalk", description="Interactive three-agent grounding dialogue laboratory.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, run_required=True):
        sp.add_argument("--run", required=run_required, help=f"run directory (bare names go under ${cfgmod.HOME_ENV}, default ./runs)")
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen-corpus", help="write a scripted corpus into a run directory")
    common(sp)
    sp.add_argument("--scenes", type=int, help="number of dialogues (corpus_size)")
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("pretrain", help="supervised pretraining; writes epoch-0 checkpoints")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="interactive reinforcement training")
    common(sp)
    sp.add_argument("--init", help="run directory holding pretrained checkpoints")
    sp.add_argument("--tune", help="models to tune, e.g. q or q,a,g")
    sp.add_argument("--prune", action="store_true", help="prune questions before the guesser reads them")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--scenes", type=int, help="held-out evaluation scenes")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batches-per-epoch", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate checkpoints on the held-out scene set")
    common(sp)
    sp.add_argument("--epoch", type=int, help="newest checkpoints at or before this epoch (default: latest)")
    sp.add_argument("--scenes", type=int)
    sp.add_argument("--prune", dest="prune", action="store_true", default=None)
    sp.add_argument("--no-prune", dest="prune", action="store_false")
    sp.add_argument("--tag", help="report/log name (default final_seed<seed>)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare", help="tabulate reports grouped by mask with 2-sigma flags")
    sp.add_argument("reports", nargs="+", help="EvalReport JSON files or run directories")
    sp.add_argument("--min-seeds", type=int, default=1)
    sp.add_argument("--json", help="also write the comparison as JSON")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("play", help="play a game as answerer or guesser")
    common(sp)
    sp.add_argument("--role", choices=("answerer", "guesser"), default="answerer")
    sp.add_argument("--epoch", type=int)
    sp.add_argument("--scenes", type=int, help="number of games")
    sp.set_defaults(func=cmd_play)

    sp = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    sp.add_argument("--seeds", type=int, default=20)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("replay", help="recompute logged rewards through the referenced checkpoints")
    sp.add_argument("log", help="DialogueLog JSONL file")
    sp.add_argument("--run", help="run directory (default: the log's grandparent)")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args) or 0
    except VocabularyMismatch as exc:
        print(f"error: vocabulary mismatch: {exc}", file=sys.stderr)
        return EXIT_VOCAB
    except MissingCheckpoint as exc:
        print(f"error: missing checkpoint: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointError as exc:
        print(f"error: bad checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConfigurationError as exc:
        print(f"error: malformed config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
