"""Print the error table of one relaxation sweep (epsilon, three error terms, total) and the fitted slope."""
import argparse

from relaxlab.experiments import SWEEP_EPSILONS, relaxation_pair, summarize_sweep
from relaxlab.model import PhysParams
from relaxlab.solvers import DtPolicy
from relaxlab.spectral import Grid


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", default="ill-prepared-O1")
    ap.add_argument("--q", type=float)
    ap.add_argument("--lam", type=float, default=0.5)
    ap.add_argument("--mu", type=float, default=1.0)
    ap.add_argument("--T", type=float, default=2.0)
    ap.add_argument("--amplitude", type=float, default=0.1)
    ap.add_argument("--eps", type=float, nargs="+", default=list(SWEEP_EPSILONS))
    ap.add_argument("--n-points", type=int, default=256)
    args = ap.parse_args(argv)
    policy = DtPolicy(steps_per_T=2000, layer_fraction=0.1)
    grid = Grid(1, args.n_points)
    members = [relaxation_pair(args.kind, PhysParams(lam=args.lam, mu=args.mu, epsilon=e), grid, args.amplitude,
                               args.T, q=args.q, policy=policy) for e in args.eps]
    s = summarize_sweep(members)
    print(f"{'eps':>8} {'sup':>11} {'l1_high':>11} {'l1_vel':>11} {'total':>11} {'X/X0':>7}")
    for r in s.results:
        e = r.error
        print(f"{r.epsilon:8.4g} {e.sup_err:11.4e} {e.l1_high_err:11.4e} {e.l1_vel_err:11.4e} {e.total:11.4e} "
              f"{r.max_ratio:7.3f}")
    print(f"slope {s.slope:.3f} (rms {s.residual:.2e}), damped-mode spread {s.damped_spread:.2f}")


if __name__ == "__main__":
    main()
