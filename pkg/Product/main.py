import argparse
import json
import os
import sys
from typing import Optional

# Add parent directory to path to import config.py from project root
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from config import Config
from errors import ConfigError, PRPNError
from pipeline import ExperimentPipeline
from property_suite import write_reports
from run_config import RunConfig
from storage import RunStorage

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _pipeline(args: argparse.Namespace) -> ExperimentPipeline:
    run = RunConfig(
        command=args.command,
        config_path=args.config,
        overrides=args.override or [],
        seed=args.seed,
        output_dir=args.output_dir or Config.STORAGE_DIR,
    )
    return ExperimentPipeline(run, save=not args.no_save)


def cmd_train(args: argparse.Namespace):
    result = _pipeline(args).train(resume=args.resume)
    print(json.dumps(result))


def cmd_eval_lm(args: argparse.Namespace):
    result = _pipeline(args).eval_lm(checkpoint=args.checkpoint, corpus_path=args.corpus)
    print(json.dumps({result["metric_name"]: result["metric_value"], "nll": result["nll"], "tokens": result["tokens"]}))


def cmd_parse(args: argparse.Namespace):
    for line in _pipeline(args).parse(args.checkpoint, args.input):
        print(line)


def cmd_eval_parse(args: argparse.Namespace):
    result = _pipeline(args).eval_parse(
        checkpoint=args.checkpoint,
        gold_path=args.gold,
        predictions_path=args.predictions,
        aggregate=args.aggregate,
        seed=args.seed if args.seed is not None else 0,
    )
    report = {key: result[key] for key in ("sentences", "precision", "recall", "f1", "aggregate", "baselines")}
    print(json.dumps(report))


def cmd_inspect_distances(args: argparse.Namespace):
    sentences = _pipeline(args).inspect_distances(args.checkpoint, text=args.text, input_path=args.input)
    for index, sentence in enumerate(sentences):
        if index:
            print()
        for token, distance in sentence:
            print(f"{token}\t{distance:.6g}")


def cmd_check_properties(args: argparse.Namespace):
    reports = _pipeline(args).check_properties(
        seed=args.seed if args.seed is not None else 0,
        trials=args.trials,
    )
    write_reports(reports, sys.stdout)
    if any(not report.passed for report in reports):
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


def cmd_list(args: argparse.Namespace):
    storage = RunStorage()
    runs = storage.get_run_history(limit=args.limit)

    if not runs:
        print("No runs saved yet.")
        return

    for run in runs:
        if args.command_filter and run["command"] != args.command_filter:
            continue
        print(
            f"{run['run_id']} | {run['timestamp']} | {run['command']} | status={run['status']} "
            f"| {run['metric_name']}={run['metric_value']}"
        )


def cmd_stats(_args: argparse.Namespace):
    storage = RunStorage()
    print(json.dumps(storage.get_run_statistics(), indent=2))


class CLIArgumentParser(argparse.ArgumentParser):
    """Usage errors surface as ConfigError instead of exiting with usage text"""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}", usage=self.format_usage().strip())


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="Experiment JSON file or preset name (ptb-char, ptb-word, ...).")
    parser.add_argument(
        "--override",
        action="append",
        metavar="KEY.PATH=VALUE",
        help="Dot-path override, e.g. trainer.lr=0.001 (repeatable).",
    )
    parser.add_argument("--seed", type=int, help="Seed for initialization, dropout and batch order.")
    parser.add_argument("--output-dir", help=f"Run directory root (default: {Config.STORAGE_DIR}).")
    parser.add_argument("--no-save", action="store_true", help="Do not record the run in SQLite.")


def build_parser() -> argparse.ArgumentParser:
    parser = CLIArgumentParser(
        description="Parsing-reading-predict language model: training, evaluation and tree induction."
    )
    parser.add_argument("--log-level", help=f"Logging level (default: {Config.LOG_LEVEL}).")

    subparsers = parser.add_subparsers(dest="command", required=True)

    train_parser = subparsers.add_parser("train", help="Train a language model.")
    _add_common(train_parser)
    train_parser.add_argument("--resume", help="Continue from a checkpoint written by train.")
    train_parser.set_defaults(func=cmd_train)

    eval_parser = subparsers.add_parser("eval-lm", help="Report BPC (char) or PPL (word) as JSON.")
    _add_common(eval_parser)
    eval_parser.add_argument("--checkpoint", help="Checkpoint to evaluate (untrained model when omitted).")
    eval_parser.add_argument("--corpus", help="Corpus file (default: data.test, then data.valid).")
    eval_parser.set_defaults(func=cmd_eval_lm)

    parse_parser = subparsers.add_parser("parse", help="Print one bracketed binary tree per input line.")
    _add_common(parse_parser)
    parse_parser.add_argument("--checkpoint", help="Trained checkpoint.")
    parse_parser.add_argument("--input", required=True, help="One sentence per line.")
    parse_parser.set_defaults(func=cmd_parse)

    eval_parse_parser = subparsers.add_parser("eval-parse", help="Unlabeled F1 against gold trees.")
    _add_common(eval_parse_parser)
    eval_parse_parser.add_argument("--checkpoint", help="Trained checkpoint.")
    eval_parse_parser.add_argument("--gold", help="Bracketed gold trees (default: data.gold_trees).")
    eval_parse_parser.add_argument("--predictions", help="Score these bracketed trees instead of parsing.")
    eval_parse_parser.add_argument(
        "--aggregate",
        choices=("sentence", "bracket"),
        default="sentence",
        help="Average per sentence or sum brackets over the corpus.",
    )
    eval_parse_parser.set_defaults(func=cmd_eval_parse)

    inspect_parser = subparsers.add_parser("inspect-distances", help="Print token<TAB>distance lines.")
    _add_common(inspect_parser)
    inspect_parser.add_argument("--checkpoint", help="Trained checkpoint.")
    inspect_parser.add_argument("--text", help="Text to inspect.")
    inspect_parser.add_argument("--input", help="File to inspect, one sentence per line.")
    inspect_parser.set_defaults(func=cmd_inspect_distances)

    props_parser = subparsers.add_parser("check-properties", help="Run the randomized property suite.")
    _add_common(props_parser)
    props_parser.add_argument("--trials", type=int, help="Trials per property (defaults per property).")
    props_parser.set_defaults(func=cmd_check_properties)

    list_parser = subparsers.add_parser("list", help="List recently saved runs.")
    list_parser.add_argument("--limit", type=int, default=20, help="Max runs to show.")
    list_parser.add_argument("--command", dest="command_filter", help="Only show runs of this command.")
    list_parser.set_defaults(func=cmd_list)

    stats_parser = subparsers.add_parser("stats", help="Show aggregate statistics across runs.")
    stats_parser.set_defaults(func=cmd_stats)

    return parser


def _error_line(exc: BaseException) -> str:
    if isinstance(exc, PRPNError):
        payload = exc.to_dict()
    else:
        payload = {"error": type(exc).__name__, "message": str(exc)}
    return json.dumps(payload, default=str)


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    Config.setup_logging(args.log_level)
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        print(_error_line(exc), file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
