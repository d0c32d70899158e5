"""Run every scenario config in a directory, then write summary.json.

    python scripts/run_scenarios.py configs --out results
"""
import argparse
import sys
from pathlib import Path

from relaxlab.config import ConfigError, ScenarioConfig
from relaxlab.scenarios import run_scenario, summarize


def main(argv=None):
    ap = argparse.ArgumentParser(description="run scenario configs and summarize")
    ap.add_argument("config_dir", type=Path)
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    worst = 0
    for path in sorted(args.config_dir.glob("*.json")):
        try:
            cfg = ScenarioConfig.load(path, overrides={"output_dir": args.out, "workers": args.workers})
        except ConfigError as exc:
            print(f"{path.name}: config error: {exc}", file=sys.stderr)
            worst = max(worst, 2)
            continue
        res = run_scenario(cfg)
        failed = [c.name for c in res.checks if not c.passed]
        print(f"{cfg.scenario:22s} {'PASS' if res.passed else 'FAIL'} {' '.join(failed)}")
        worst = max(worst, res.exit_code)
    summary = summarize(args.out)
    print(f"summary: pass={summary['pass']} fail={summary['fail']}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
