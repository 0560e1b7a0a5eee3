"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Data goes to stdout as JSON; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .corpus import (
    SlotTable,
    build_dataset,
    corpus_stats,
    dumps_corpus,
    parse_corpus,
    utterances_from_json,
)
from .corpus.data import USER, DataError, Utterance
from .corpus.text import tokenize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
log = logging.getLogger("ptd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_build_dataset(args) -> int:
    slots = SlotTable.load(args.slots) if args.slots else None
    dialogues = build_dataset(parse_corpus(args.input), slots, args.fraction, args.seed)
    _write_text(args.out, dumps_corpus(dialogues))
    if args.out != "-":
        _emit(corpus_stats(dialogues))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import synth_corpus

    if args.dialogues < 1:
        raise UsageError("--dialogues must be >= 1")
    dialogues = synth_corpus(args.dialogues, args.seed, hard=args.hard)
    _write_text(args.out, dumps_corpus(dialogues))
    if args.out != "-":
        _emit(corpus_stats(dialogues))
    return EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_train(args) -> int:
    from .pipeline import ExperimentConfig, run_training

    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for key in ("corpus", "out_dir", "seed", "beam_size", "epochs"):
        value = getattr(args, key, None)
        if value is None:
            continue
        if key == "epochs":
            for section in ("prediction", "decision", "baseline"):
                config.override(f"{section}.epochs", value)
        else:
            config.override(key, value)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config.override(key, _parse_value(value))
    result = run_training(config)
    _emit(result.report)
    log.info("wall clock: %s", result.timing)
    return EXIT_OK


def _load_ptd(ckpts: str):
    from .pipeline import PTD

    return PTD.from_dir(ckpts)


def cmd_evaluate(args) -> int:
    from .corpus import split_dialogues
    from .pipeline import CHECKPOINT_NAMES, evaluate_models, load_checkpoint

    ptd = _load_ptd(args.ckpts)
    dialogues = parse_corpus(args.corpus)
    if args.split != "all":
        dialogues = split_dialogues(dialogues)[args.split]
    baseline = None
    path = Path(args.ckpts) / CHECKPOINT_NAMES["baseline"]
    if path.exists():
        baseline = load_checkpoint(path)
    _emit(evaluate_models(ptd, dialogues, baseline))
    return EXIT_OK


def _read_history(source: str) -> list:
    text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"history is not valid JSON ({exc.msg})") from None
    return utterances_from_json(obj)


def cmd_decide(args) -> int:
    from .base import check_decision_point

    history = check_decision_point(_read_history(args.history_json))
    _emit(_load_ptd(args.ckpts).decide(history).to_dict())
    return EXIT_OK


def _style(text: str, code: str) -> str:
    if os.environ.get("NO_COLOR") or not sys.stdout.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def cmd_demo(args) -> int:
    from .pipeline import CheckpointError

    try:
        ptd = _load_ptd(args.ckpts)
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("type a user sub-turn per line; :reset clears the history, :quit exits")
    history: list = []
    while True:
        try:
            line = input("user> ")
        except EOFError:
            print()
            return EXIT_OK
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            return EXIT_OK
        if line == ":reset":
            history = []
            print("(history cleared)")
            continue
        tokens = tokenize(line)
        if not tokens:
            continue
        if history and history[-1].speaker_id == USER:
            last = history[-1]
            history.append(Utterance(tokens, last.turn_id, last.sub_turn_id + 1, USER))
        else:
            turn = history[-1].turn_id + 1 if history else 0
            history.append(Utterance(tokens, turn, 0, USER))
        d = ptd.decide(history)
        verdict = _style("ANSWER", "1;32") if d.label else _style("WAIT", "1;33")
        print(f"{verdict}  p_answer={d.p_answer:.3f}")
        print(f"  simulated user : {' '.join(d.r_u) or '(empty)'}")
        print(f"  simulated agent: {' '.join(d.r_a) or '(empty)'}")
        if d.label and d.r_a:
            history.append(Utterance(list(d.r_a), history[-1].turn_id + 1, 0, 1))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptd", description="Predict-then-decide wait-or-answer toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-dataset", help="delexicalise and segment a raw corpus")
    p.add_argument("--in", dest="input", required=True, help="raw corpus (JSONL)")
    p.add_argument("--slots", help="slot table JSON (value -> [placeholder])")
    p.add_argument("--fraction", type=float, default=0.5, help="share of multi-sentence user turns to split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="constructed corpus path, or - for stdout")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("synth", help="generate a synthetic constructed corpus")
    p.add_argument("--dialogues", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--hard", action="store_true", help="drop surface cues")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train prediction, decision and baseline models")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--corpus")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--beam-size", dest="beam_size", type=int)
    p.add_argument("--epochs", type=int, help="epochs for every model")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. decision.dropout=0.5 (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="classification report and BLEU matrix on a corpus")
    p.add_argument("--ckpts", required=True, help="directory holding the checkpoints")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test", "all"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decide", help="wait-or-answer for one history")
    p.add_argument("--ckpts", required=True)
    p.add_argument("--history-json", dest="history_json", required=True, help="utterance list JSON file or -")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("demo", help="interactive terminal loop over trained checkpoints")
    p.add_argument("--ckpts", required=True)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    from .pipeline import CheckpointError, ConfigError, StageError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ptd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"ptd: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, DataError) else EXIT_RUNTIME
    except CheckpointError as exc:
        print(f"ptd: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DataError, ConfigError) as exc:
        print(f"ptd: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"ptd: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"ptd: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, OSError) as exc:
        print(f"ptd: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
