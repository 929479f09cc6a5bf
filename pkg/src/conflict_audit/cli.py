"""Command-line entry point: ``conflict-audit <stage> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from .calibrate import DEFAULT_TAUS
from .corpus import CorpusError
from .counterfact import load_lexicon, sample_review
from .legitbias import LegitCounts, legitimization_report
from .modelgate import ConfigError, EndpointError
from .pipeline import Context, DataError, RunConfig, report_path, run_pipeline
from .store import Store, StoreError, dumps

EXIT_OK, EXIT_CONFIG, EXIT_ENDPOINT, EXIT_DATA = 0, 2, 3, 4
COMMANDS = ("ingest", "infer", "calibrate", "metrics", "fairness", "legitbias", "perturb", "ambiguity",
            "errortrace", "report", "all")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def _counts(text: str) -> LegitCounts:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected n_fl,n_fi,n_v,n_b")
    try:
        return LegitCounts(*(int(p) for p in parts))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--country", default="Cameroon")
    g.add_argument("--model", action="append", dest="models", metavar="MODEL",
                   help="model id; repeat for several (default: three mock models)")
    g.add_argument("--strategy", choices=("zero_shot", "few_shot", "explainable"),
                   help="prompting strategy (default: $STRATEGY or zero_shot)")
    g.add_argument("--shots", type=int, help="examples per category for few_shot (default: $NUM_EXAMPLES or 3)")
    g.add_argument("--endpoint", default="mock", help="mock[:opts], replay:<path> or a chat URL")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-boot", type=int, default=1000)
    g.add_argument("--n-perm", type=int, default=1000)
    g.add_argument("--positive-label", action="append", dest="positive_labels", metavar="LABEL")
    g.add_argument("--out", default="results", help="store root")
    g.add_argument("--input", help="ACLED CSV export or canonical JSONL corpus")
    g.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic events instead of --input")
    g.add_argument("--sample", type=int, help="stratified sample size drawn at ingest")
    g.add_argument("--calibration-split", type=float, help="fit fraction for held-out calibration")
    g.add_argument("--thresholds", type=_floats, default=DEFAULT_TAUS, help="selective-prediction taus")
    g.add_argument("--lexicon", help="perturbation lexicon JSON (default: bundled)")
    g.add_argument("--calibrated-ambiguity", action="store_true",
                   help="score ambiguity with temperature-calibrated confidences")
    g.add_argument("--parallelism", type=int, default=4)
    g.add_argument("--force", action="store_true", help="overwrite conflicting fragments instead of versioning")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="conflict-audit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "legitbias":
            sp.add_argument("--counts", type=_counts, help="report straight from n_fl,n_fi,n_v,n_b")
        if name == "perturb":
            sp.add_argument("--sample-review", type=int, metavar="N",
                            help="print N random original/perturbed pairs and exit")
        if name in ("report", "all"):
            sp.add_argument("--print", action="store_true", dest="print_report", help="echo the report JSON")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        country=args.country,
        models=tuple(args.models) if args.models else RunConfig.models,
        strategy=args.strategy,
        shots=args.shots,
        endpoint=args.endpoint,
        seed=args.seed,
        n_boot=args.n_boot,
        n_perm=args.n_perm,
        taus=tuple(args.thresholds),
        positive_labels=tuple(args.positive_labels) if args.positive_labels else ("V",),
        input=args.input,
        synthetic=args.synthetic,
        sample=args.sample,
        calibration_split=args.calibration_split,
        lexicon=args.lexicon,
        calibrated_ambiguity=args.calibrated_ambiguity,
        out=args.out,
        force=args.force,
        parallelism=args.parallelism,
    )


def _run(args: argparse.Namespace) -> int:
    if args.command == "legitbias" and args.counts is not None:
        print(dumps(legitimization_report(args.counts).to_dict()), end="")
        return EXIT_OK
    cfg = config_from_args(args)
    if args.command == "perturb" and args.sample_review:
        ctx = Context(cfg, Store(cfg.out))
        events = [(r.event_id, r.notes) for r in ctx.corpus()]
        for item in sample_review(events, args.sample_review, cfg.seed, load_lexicon(cfg.lexicon)):
            print(json.dumps(item, ensure_ascii=False))
        return EXIT_OK
    if args.command == "all":
        run_pipeline(cfg)
    else:
        # A single named stage always reruns.
        run_pipeline(cfg, [args.command], resume=False)
    if args.command in ("report", "all"):
        path = report_path(cfg)
        if args.print_report:
            print(json.dumps(json.loads(path.read_text())["data"], indent=1, sort_keys=True))
        else:
            print(path)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EndpointError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except (DataError, CorpusError, StoreError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
