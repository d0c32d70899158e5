"""Command-line front end: ``relaxlab <scenario> --config cfg.json --out results``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import SCENARIOS, ConfigError, ScenarioConfig
from .scenarios import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, SummaryError, run_scenario, summarize


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relaxlab", description="Relaxation-limit laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("--config", help="flat JSON config; the scenario key may be omitted")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--workers", type=int, help="concurrent sweep members")
        sp.add_argument("--k0", type=int, help="override the threshold shift k0")
        sp.add_argument("--verbose", "-v", action="store_true")
    sp = sub.add_parser("summarize", help="aggregate scenario manifests into summary.json")
    sp.add_argument("results_dir", nargs="?", help="directory holding <scenario>/manifest.json")
    sp.add_argument("--out", help="same as results_dir")
    sp.add_argument("--verbose", "-v", action="store_true")
    return ap


def config_from_args(args) -> ScenarioConfig:
    overrides = {key: getattr(args, flag) for flag, key in (("out", "output_dir"), ("workers", "workers"), ("k0", "k0"))
                 if getattr(args, flag) is not None}
    if args.config:
        return ScenarioConfig.load(args.config, scenario=args.command, overrides=overrides)
    return ScenarioConfig.from_dict({"scenario": args.command, **overrides})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "summarize":
        root = args.results_dir or args.out
        if root is None:
            print("summarize needs a results directory", file=sys.stderr)
            return EXIT_CONFIG
        try:
            summary = summarize(root)
        except SummaryError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        print(f"pass={summary['pass']} fail={summary['fail']}")
        return EXIT_PASS if summary["fail"] == 0 else EXIT_FAIL
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    res = run_scenario(cfg)
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} (threshold {c.threshold:.6g})")
    if res.runtime_alarm:
        print(f"runtime alarm: {res.runtime_alarm}", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
