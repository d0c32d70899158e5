"""Calibration runs behind the acceptance thresholds.

Prints one JSON document with the measured values.  Pick the groups with
--only; everything runs by default (a few minutes on one core).
"""
import argparse
import json
import sys
import time

import numpy as np

from relaxlab.experiments import (SWEEP_EPSILONS, diffusion_gap_at, order_study, relaxation_pair, stability_probe,
                                  summarize_sweep)
from relaxlab.model import PhysParams
from relaxlab.solvers import DtPolicy
from relaxlab.spectral import Grid

GROUPS = ("sweeps", "probes", "diffusion", "orders")


def sweeps(args):
    out = {}
    policy = DtPolicy(steps_per_T=2000, layer_fraction=0.1)
    for lam in (-0.5, 0.5):
        for family, kind, q in (("O1", "ill-prepared-O1", None), ("gap-1/2", "gap-controlled", 0.5),
                                ("singular", "ill-prepared-singular", None)):
            members = [relaxation_pair(kind, PhysParams(lam=lam, epsilon=eps), Grid(), 0.1, 2.0, q=q, policy=policy)
                       for eps in SWEEP_EPSILONS]
            out[f"{family}@{lam:g}"] = summarize_sweep(members).to_dict()
    return out


def probes(args):
    cases = {"critical-stable": (1.0, 4.0, 0.1), "critical-violated": (1.0, 1.0, 0.1),
             "supercritical": (1.5, 1.0, 0.3)}
    return {name: stability_probe(PhysParams(lam=lam, mu=mu, epsilon=1.0), Grid(), amp, args.probe_T).to_dict()
            for name, (lam, mu, amp) in cases.items()}


def diffusion(args):
    out = {}
    for n, L in ((256, 128 * np.pi), (1024, 512 * np.pi)):
        g = Grid(1, n, L)
        out[f"L={L / np.pi:g}pi"] = {f"lambda={lam:g}": diffusion_gap_at(PhysParams(lam=lam, mu=1.0), g)
                                     for lam in (0.5, 1.5)}
    return out


def orders(args):
    e, pm = order_study(PhysParams(lam=0.5, mu=1.0, epsilon=0.5), Grid(1, 128, 16 * np.pi))
    return {"euler": e.to_dict(), "porous-medium": pm.to_dict()}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="+", choices=GROUPS, default=list(GROUPS))
    ap.add_argument("--probe-T", type=float, default=200.0)
    ap.add_argument("--out", help="write the JSON here instead of stdout")
    args = ap.parse_args(argv)
    result = {}
    for name in args.only:
        start = time.perf_counter()
        result[name] = globals()[name](args)
        print(f"{name}: {time.perf_counter() - start:.1f}s", file=sys.stderr)
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


if __name__ == "__main__":
    main()
