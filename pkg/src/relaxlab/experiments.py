"""Experiment building blocks shared by the CLI, the scripts and the acceptance tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import EnergyReport, EnergyTracker, ErrorReport, error_norms, fit_rate
from .linear import (diffusion_gap, incompressible_factor, join_velocity, propagate_modes, solve_damped_wave,
                     solve_heat_timedep, split_velocity)
from .model import PhysParams, damping_b, validate_params
from .solvers import (BlowUpDetected, DtPolicy, MonitorCaps, build_initial_data, high_frequency_energy, run_euler,
                      run_porous_medium)
from .spectral import DyadicLadder, Grid, SpectralField, dyadic_block, l2_norm_vector

SWEEP_EPSILONS = (0.2, 0.1, 0.05, 0.025)


@dataclass
class RelaxationResult:
    epsilon: float
    error: ErrorReport
    energy: EnergyReport
    max_ratio: float
    mass_drift: float
    steps: int

    @property
    def damped_mode_scaled(self) -> float:
        """eps^-1 int ||b^-1 z||_{B^{d/2}}; the tracker already carries the 1/eps weight."""
        return float(self.energy.terms["l1_damped_mode"])

    def row(self) -> dict:
        e = self.error
        return {"epsilon": self.epsilon, "sup_err": e.sup_err, "l1_high_err": e.l1_high_err,
                "l1_vel_err": e.l1_vel_err, "total": e.total}


def relaxation_pair(kind: str, p: PhysParams, grid: Grid, amplitude: float, T: float, q: float | None = None,
                    policy: DtPolicy | None = None, k0: int = 2) -> RelaxationResult:
    """Euler run plus porous-medium run on the same step times; error norms and X(t)."""
    policy = policy or DtPolicy(layer_fraction=0.1)
    init_e, init_pm = build_initial_data(kind, p, grid, amplitude, q=q, k0=k0)
    tracker = EnergyTracker(p, grid, k0)
    traj_e = run_euler(init_e, T, p, policy, "all", hooks=[tracker])
    traj_pm = run_porous_medium(init_pm, T, p, policy, times=np.asarray(traj_e.times))
    err = error_norms(traj_e, traj_pm, p, k0)
    rep = tracker.report()
    drift = max(traj_e.mass_drift, traj_pm.mass_drift)
    return RelaxationResult(p.epsilon, err, rep, float(np.max(tracker.ratio_history())), drift,
                            len(traj_e.times) - 1)


@dataclass
class SweepSummary:
    results: list
    slope: float
    intercept: float
    residual: float
    damped_spread: float
    ratio_spread: float
    max_ratio: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual,
                "damped_mode_spread": self.damped_spread, "ratio_spread": self.ratio_spread,
                "max_ratio": self.max_ratio,
                "members": [dict(r.row(), max_ratio=r.max_ratio, damped_mode_scaled=r.damped_mode_scaled,
                                 mass_drift=r.mass_drift, steps=r.steps) for r in self.results]}


def _spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min()) if v.min() > 0 else math.inf


def summarize_sweep(results) -> SweepSummary:
    results = sorted(results, key=lambda r: r.epsilon)
    slope, icpt, res = fit_rate([(r.epsilon, r.error.total) for r in results])
    ratios = [r.max_ratio for r in results]
    return SweepSummary(results, slope, icpt, res, _spread([r.damped_mode_scaled for r in results]),
                        _spread(ratios), max(ratios))


@dataclass
class ProbeOutcome:
    lam: float
    mu: float
    epsilon: float
    regime: str
    guaranteed: bool
    completed: bool
    trigger: str | None
    t_end: float
    max_ratio: float
    hf_growth: float
    mass_drift: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stability_probe(p: PhysParams, grid: Grid, amplitude: float, T: float, policy: DtPolicy | None = None,
                    k0: int = 2, kind: str = "ill-prepared-O1", caps: MonitorCaps | None = None) -> ProbeOutcome:
    """One long Euler run: blow-up monitor, X/X0 and the growth of high-frequency energy."""
    policy = policy or DtPolicy(steps_per_T=2000)
    report = validate_params(p)
    init, _ = build_initial_data(kind, p, grid, amplitude, k0=k0)
    tracker = EnergyTracker(p, grid, k0)
    hf0 = high_frequency_energy(init, p)
    hf_max = [hf0]

    def hf_hook(s, dt):
        hf_max[0] = max(hf_max[0], high_frequency_energy(s, p))

    trigger, completed = None, True
    try:
        traj = run_euler(init, T, p, policy, hooks=[tracker, hf_hook], monitor=caps)
    except BlowUpDetected as exc:
        traj, trigger, completed = exc.trajectory, exc.trigger, False
    t_end = tracker.history[-1][0] if tracker.history else 0.0
    growth = hf_max[0] / hf0 if hf0 > 0 else math.inf
    return ProbeOutcome(p.lam, p.mu, p.epsilon, report.regime.value, report.guaranteed, completed, trigger, t_end,
                        float(np.max(tracker.ratio_history())), float(growth), float(traj.mass_drift))


# ---------------------------------------------------------------------------
# linear oracle and self-convergence


def linear_oracle_error(p: PhysParams, grid: Grid, T: float = 1.0, amplitude: float = 0.1,
                        policy: DtPolicy | None = None, cadence: int = 20,
                        kind: str = "ill-prepared-O1") -> float:
    """Largest relative distance, over snapshots, between the linear-only Euler run and per-mode propagation."""
    policy = policy or DtPolicy(steps_per_T=1000)
    init, _ = build_initial_data(kind, p, grid, amplitude)
    traj = run_euler(init, T, p, policy, cadence, nonlinear=False)
    n0 = init.n.coefficients
    m0, om0, mean0 = split_velocity(init.u_coefficients(), grid, p.epsilon)
    worst = 0.0
    for t, s in zip(traj.times[1:], traj.states[1:]):
        n_t, m_t = propagate_modes(n0, m0, grid.kmag, 0.0, t, p)
        n_t.flat[0] = n0.flat[0]
        fac = incompressible_factor(0.0, t, p)
        u_t = join_velocity(m_t, None if om0 is None else om0 * fac, mean0 * fac, grid, p.epsilon)
        ref = np.concatenate([n_t[None], u_t]) * grid.nyquist_free
        got = np.concatenate([s.n.coefficients[None], s.u_coefficients()])
        worst = max(worst, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    return worst


@dataclass
class OrderStudy:
    solver: str
    dts: list
    errors: list
    orders: list

    @property
    def min_order(self) -> float:
        return float(min(self.orders))

    def to_dict(self) -> dict:
        return {"solver": self.solver, "dts": self.dts, "errors": self.errors, "orders": self.orders,
                "min_order": self.min_order}


def order_study(p: PhysParams, grid: Grid, T: float = 1.0, dt0: float = 0.1, levels: int = 3,
                amplitude: float = 0.2, kind: str = "ill-prepared-O1") -> tuple[OrderStudy, OrderStudy]:
    """dt-halving study of both solvers against a dt0/16 reference; L2 error of the final state."""
    init_e, init_pm = build_initial_data(kind, p, grid, amplitude)

    def euler_vec(dt):
        s = run_euler(init_e, T, p, DtPolicy(fixed=dt), 1, monitor=False).final
        return np.concatenate([s.n.values.ravel(), s.u_values().ravel()])

    def pm_vec(dt):
        return run_porous_medium(init_pm, T, p, DtPolicy(fixed=dt), 1).final.rho_star.values.ravel()

    out = []
    dts = [dt0 / 2**i for i in range(levels)]
    for name, run in (("euler", euler_vec), ("porous-medium", pm_vec)):
        ref = run(dt0 / 16)
        errs = [float(np.linalg.norm(run(dt) - ref) * math.sqrt(grid.dx**grid.dim)) for dt in dts]
        orders = [float(math.log2(errs[i] / errs[i + 1])) for i in range(levels - 1)]
        out.append(OrderStudy(name, dts, errs, orders))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# diffusion phenomenon


def low_frequency_bump(grid: Grid, cutoff: float = 0.5) -> SpectralField:
    """Zero-mean field with Fourier profile (1 - |xi|^2/c^2)^2 supported in |xi| < c."""
    k = grid.kmag
    coef = np.where(k < cutoff, (1.0 - (k / cutoff) ** 2) ** 2, 0.0) * grid.n_points**grid.dim
    coef.flat[0] = 0.0
    return SpectralField.from_coefficients(grid, coef.astype(complex))


def diffusion_gap_at(p: PhysParams, grid: Grid, t_check: float = 50.0, cutoff: float = 0.5) -> float:
    """Relative L2 gap between the damped wave and the heat flow at t_check.

    The wave starts from the bump with the rate the heat flow would have,
    n_t(0) = b(0) P'(rho_bar) Lap n0.
    """
    n0 = low_frequency_bump(grid, cutoff)
    rate = SpectralField.from_coefficients(
        grid, -p.sound_speed_sq * damping_b(0.0, p) * grid.kmag**2 * n0.coefficients)
    wave = solve_damped_wave(n0, rate, t_check, p, snapshots=1)
    heat = solve_heat_timedep(n0, t_check, p, snapshots=1)
    return diffusion_gap(wave, heat, t_check)


# ---------------------------------------------------------------------------
# spectral self-test


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def spectral_selftest(grid: Grid, seed: int = 0, n_fields: int = 50) -> list[Check]:
    """Partition of unity, Bernstein bounds and almost-orthogonality of the dyadic blocks."""
    ladder = DyadicLadder.for_grid(grid)
    W = ladder.multipliers(grid)
    nonzero = grid.kmag > 0
    pou = float(np.max(np.abs(W.sum(axis=0)[nonzero] - 1.0)))
    checks = [Check("partition-of-unity", pou <= 1e-12, pou, 1e-12)]

    rng = np.random.default_rng(seed)
    worst = 0.0
    inner = ladder.indices[(2.0 ** ladder.indices * 8 / 3 <= grid.k_max) & (2.0 ** ladder.indices * 0.75 >= grid.k_min)]
    for _ in range(n_fields):
        j = int(rng.choice(inner))
        c = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
        u = SpectralField(grid, values=grid.ifft(c))
        blk = dyadic_block(u, j, ladder)
        g = l2_norm_vector(blk.gradient())
        r = g / blk.l2_norm() / 2.0**j
        # distance outside [3/4, 8/3], zero when inside
        worst = max(worst, 0.75 - r, r - 8.0 / 3.0)
    checks.append(Check("bernstein", worst <= 0.0, worst, 0.0, f"{n_fields} block-localised fields"))

    overlap = 0.0
    for a in range(len(ladder)):
        for b in range(a + 2, len(ladder)):
            overlap = max(overlap, float(np.max(np.abs(W[a] * W[b]))))
    checks.append(Check("block-orthogonality", overlap == 0.0, overlap, 0.0, "|j - k| >= 2"))
    return checks
