"""Interactive sessions where a person takes the answerer or guesser seat.

``run_session`` is the game loop with pluggable answer and guess sources;
``play`` wires it to a terminal (or any read/write callables, for tests).
"""
from __future__ import annotations

import numpy as np

from .agents import history_tokens
from .env import Answer, object_features, oracle_answer
from .pruning import PruneConfig, prune_dialogue
from .records import DialogueLog, Round

ROLES = ("answerer", "guesser")


class SessionAborted(Exception):
    """Input ended before the session finished."""


def render_scene(scene, show_target=False):
    """Text grid: object ids in their cells, '.' for empty; the target in brackets if shown."""
    W, H = scene.grid
    cells = [["." for _ in range(W)] for _ in range(H)]
    for o in scene.objects:
        x, y = o.cell
        mark = f"[{o.object_id}]" if show_target and o.object_id == scene.target_id else str(o.object_id)
        cells[y][x] = mark
    width = max(3, *(len(c) for row in cells for c in row))
    lines = ["   " + "".join(str(x).center(width) for x in range(W))]
    for y, row in enumerate(cells):
        lines.append(f"{y:>2} " + "".join(c.center(width) for c in row))
    lines.append("")
    for o in scene.objects:
        tag = "  <- target" if show_target and o.object_id == scene.target_id else ""
        lines.append(f"  {o.object_id}: {o.size} {o.color} {o.category} at x={o.cell[0]} y={o.cell[1]}{tag}")
    return "\n".join(lines)


def run_session(agents, scene, rng, answer_fn=None, guess_fn=None, prune=False, prune_config=None, on_question=None):
    """Play one game and return its DialogueLog.

    ``answer_fn(question_tokens) -> 'yes'|'no'|'na'`` replaces the answerer
    model; ``guess_fn(rounds) -> object_id`` replaces the guesser. When left
    as None the trained model plays that seat. Only the questioner (and the
    answerer model, if it plays) draw from ``rng``.
    """
    q, vocab = agents.questioner, agents.vocab
    keep = q.model_config.history_rounds
    tfeat = object_features(scene, agents.env_config)[scene.target_index][None, :]
    rounds, stopped = [], False
    for _ in range(agents.env_config.rounds):
        toks, term, _ = q.sample([history_tokens(vocab, rounds, keep)], [scene], [rng])
        if term[0] == vocab.stop:
            stopped = True
            break
        question = tuple(vocab.decode(toks[0]))
        if on_question is not None:
            on_question(len(rounds) + 1, question)
        if answer_fn is None:
            ans = agents.answerer.answer([question], tfeat, [rng])[0][0]
        else:
            ans = Answer(answer_fn(question)).value
        rounds.append((question, ans))
    report = None
    visible = rounds
    if prune:
        pruned, report = prune_dialogue(rounds, prune_config or PruneConfig())
        visible = pruned.rounds
    guess = None
    if report is not None and report.forced_failure:
        gid, reward = None, 0
    elif guess_fn is None:
        probs, ids = agents.guesser.guess([visible], [scene])
        guess, gid = [float(p) for p in probs[0]], ids[0]
        reward = int(gid == scene.target_id)
    else:
        gid = guess_fn(visible)
        reward = int(gid == scene.target_id)
    log_rounds = [Round(qq, a) for qq, a in rounds]
    if report is not None:
        for i, reason, _ in report.removed:
            log_rounds[i].pruned, log_rounds[i].reason = True, reason
    return DialogueLog(
        scene=scene,
        rounds=log_rounds,
        stopped=stopped,
        guess=guess,
        guess_id=gid,
        reward=reward,
        forced_failure=bool(report and report.forced_failure),
        prune_report=None if report is None else report.to_dict(),
    )


def oracle_session(agents, scene, rng, **kw):
    """The same game with the truthful oracle in the answerer seat."""
    return run_session(agents, scene, rng, answer_fn=lambda question: oracle_answer(question, scene).value, **kw)


def _ask(read, write, prompt, parse):
    while True:
        try:
            raw = read(prompt)
        except EOFError:
            raise SessionAborted("input closed") from None
        value = parse(raw.strip().lower())
        if value is not None:
            return value
        write(f"  not understood: {raw.strip()!r}")


def play(agents, scene, role, rng, read=None, write=print, prune=False, prune_config=None):
    """Terminal game. Returns the transcript, or None if input ends mid-session."""
    read = read or input
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    write(render_scene(scene, show_target=role == "answerer"))
    write("")
    try:
        if role == "answerer":
            write("You are the answerer. Reply yes, no or na about the target.")

            def answer_fn(question):
                parse = lambda s: s if s in ("yes", "no", "na") else {"y": "yes", "n": "no"}.get(s)
                return _ask(read, write, f"{' '.join(question)}  [yes/no/na] > ", parse)

            log = run_session(agents, scene, rng, answer_fn=answer_fn, prune=prune, prune_config=prune_config)
            write(f"guesser picked {log.guess_id}; target was {scene.target_id}; reward {log.reward}")
        else:
            write("You are the guesser. Watch the dialogue, then pick an object id.")
            ids = {o.object_id for o in scene.objects}

            def guess_fn(rounds):
                for k, (question, ans) in enumerate(rounds, 1):
                    write(f"  Q{k}: {' '.join(question)}  A: {ans}")

                def parse(s):
                    return int(s) if s.lstrip("-").isdigit() and int(s) in ids else None

                return _ask(read, write, "your guess (object id) > ", parse)

            log = run_session(agents, scene, rng, guess_fn=guess_fn, prune=prune, prune_config=prune_config)
            write(f"target was {scene.target_id}; reward {log.reward}")
    except SessionAborted:
        write("session aborted")
        return None
    log.role = f"human-{role}"
    return log


def session_rng(seed, index):
    return np.random.default_rng((int(seed), 4242, index))
