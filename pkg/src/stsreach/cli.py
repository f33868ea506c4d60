"""Command-line entry point: ``stsreach {plan,lqr,reach,validate,report}``."""
import argparse
import dataclasses
import json
import logging
import os
import sys

from . import pipeline
from .errors import ParseError, StageError, ValidationError
from .scenario import Scenario, load_scenario, validate

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2

VERB_STAGES = {
    "plan": ("plan",),
    "lqr": ("plan", "lqr"),
    "reach": ("plan", "lqr") + pipeline.REACH_STAGES,
    "validate": pipeline.STAGES,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stsreach", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("plan", "lqr", "reach", "validate", "report"):
        p = sub.add_parser(verb)
        p.add_argument("--config", help="scenario TOML file (defaults used for missing keys)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--stages", help="comma-separated subset of " + ",".join(pipeline.STAGES))
        p.add_argument("--seed", type=int, help="seed for the bounds samples; validation uses seed + 1")
        p.add_argument("--samples", type=int, help="number of bounds and validation samples")
        p.add_argument("--grid-hz", type=float, help="grid frequency in Hz")
        p.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
    return parser


def scenario_from_args(args):
    sc = load_scenario(args.config) if args.config else Scenario()
    changes = {}
    if args.seed is not None:
        changes.update(seed_bounds=args.seed, seed_validate=args.seed + 1)
    if args.samples is not None:
        changes.update(n_bounds=args.samples, n_validate=args.samples)
    if args.grid_hz is not None:
        changes["grid_hz"] = args.grid_hz
    if args.workers is not None:
        changes["workers"] = args.workers
    return validate(dataclasses.replace(sc, **changes)) if changes else sc


def _report(out_dir):
    path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(path):
        print(f"no manifest in {out_dir}; run a stage first", file=sys.stderr)
        return EXIT_STAGE
    with open(path) as fh:
        manifest = json.load(fh)
    print(f"config {manifest['config_hash'][:12]}  grid {manifest['grid']['samples']} samples "
          f"at {manifest['grid']['hz']} Hz  backend {manifest['backend']}")
    for name, c in sorted(manifest["containment"].items()):
        print(f"containment {name}: {c['inside']}/{c['checked']} ({c['fraction']:.6f})")
    for key, val in sorted(manifest["timings_s"].items()):
        print(f"time {key}: {val:.2f} s")
    for f in manifest["files"]:
        print(f"file {os.path.join(out_dir, f)}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = scenario_from_args(args)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"[config] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.verb == "report" and not args.stages:
        return _report(args.out)
    stages = VERB_STAGES.get(args.verb, pipeline.STAGES)
    if args.stages:
        stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
        try:
            pipeline._resolve(stages)
        except ValueError as exc:
            print(f"[config] {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        report = pipeline.run(sc, stages, args.out)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    text = pipeline.summarize(report)
    if text:
        print(text)
    if args.verb == "report":
        return _report(args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
