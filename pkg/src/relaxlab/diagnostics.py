"""Derived quantities along Euler / porous-medium runs.

* damped mode z = u + b grad n and its time-integrated size
* the energy functional X(t) (seven summands) and its initial value X0
* error norms between the Euler density/velocity and the porous-medium limit
* log-log rate fits
* numerical verifiers for the ODE comparison lemma and for maximal
  regularity of the time-dependent heat flow
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .model import PhysParams, damping_B_integral, damping_b, rho_of_n
from .solvers import EulerState, PMState, Trajectory, darcy_velocity
from .spectral import DyadicLadder, Grid, NormAccumulator, SpectralField, block_norms_from_coeffs, threshold_J

XP_KEYS = ("lf_sup_n_eu", "lf_l1_bn", "lf_l1_u", "hf_sup", "hf_l1", "l2_bu", "l1_damped_mode")
C_STAR = 9.0 / 16.0


def damped_mode(s: EulerState, p: PhysParams) -> list[SpectralField]:
    """z = u + b(t) grad n."""
    b = damping_b(s.t, p)
    c = s.n.coefficients
    return [SpectralField.from_coefficients(s.grid, s.u[i].coefficients + b * 1j * k * c)
            for i, k in enumerate(s.grid.wavenumbers)]


# ---------------------------------------------------------------------------
# energy functional


@dataclass
class EnergyReport:
    terms: dict
    total: float
    X0: float
    ratio: float
    t: float

    def to_dict(self) -> dict:
        out = {k: float(self.terms[k]) for k in XP_KEYS}
        out.update(total=self.total, X0=self.X0, ratio=self.ratio, t=self.t)
        return out


def initial_energy(s: EulerState, p: PhysParams, k0: int = 2, ladder: DyadicLadder | None = None) -> float:
    """X0 = ||(n0, eps u0)||^low_{B^{d/2}} + eps ||(n0, eps u0)||^high_{B^{d/2+1}} at the threshold J_{t0}."""
    grid = s.grid
    ladder = ladder or DyadicLadder.for_grid(grid, k0)
    sd = grid.dim / 2.0
    bn = block_norms_from_coeffs(_stack_n_eps_u(s, p), grid, ladder)
    low = ladder.indices <= threshold_J(s.t, p, k0)
    j = ladder.indices
    return float(np.sum((2.0**(sd * j) * bn)[low]) + p.epsilon * np.sum((2.0**((sd + 1) * j) * bn)[~low]))


def _stack_n_eps_u(s: EulerState, p: PhysParams) -> np.ndarray:
    return np.concatenate([s.n.coefficients[None], p.epsilon * s.u_coefficients()])


class EnergyTracker:
    """Trajectory hook accumulating the seven summands of X(t).

    Every call contributes one left-endpoint sample; ``history`` holds
    (t, X(t)) after each sample.  X is nondecreasing by construction.
    """

    def __init__(self, p: PhysParams, grid: Grid, k0: int = 2):
        self.p = p
        self.grid = grid
        self.k0 = k0
        self.ladder = DyadicLadder.for_grid(grid, k0)
        sd = grid.dim / 2.0
        L = self.ladder
        self.acc = {
            "lf_sup_n_eu": NormAccumulator(sd, p, L, "low"),
            "lf_l1_bn": NormAccumulator(sd + 2, p, L, "low"),
            "lf_l1_u": NormAccumulator(sd + 1, p, L, "low"),
            "hf_sup": NormAccumulator(sd + 1, p, L, "high"),
            "hf_l1": NormAccumulator(sd + 1, p, L, "high"),
            "l2_bu": NormAccumulator(sd, p, L, "all"),
            "l1_damped_mode": NormAccumulator(sd, p, L, "all"),
        }
        self._rho = {"lf_sup_n_eu": np.inf, "lf_l1_bn": 1, "lf_l1_u": 1, "hf_sup": np.inf, "hf_l1": 1,
                     "l2_bu": 2, "l1_damped_mode": 1}
        self.X0: float | None = None
        self.history: list[tuple[float, float]] = []

    def __call__(self, s: EulerState, dt: float = 0.0) -> None:
        p, grid, L = self.p, self.grid, self.ladder
        t = s.t
        b = damping_b(t, p)
        eps = p.epsilon
        if self.X0 is None:
            self.X0 = initial_energy(s, p, self.k0, L)
        uh = s.u_coefficients()
        bn_neu = block_norms_from_coeffs(_stack_n_eps_u(s, p), grid, L)
        bn_n = block_norms_from_coeffs(s.n.coefficients, grid, L)
        bn_u = block_norms_from_coeffs(uh, grid, L)
        # b^{-1} u + grad n = b^{-1} z
        zh = uh / b + 1j * grid.wavenumbers * s.n.coefficients
        bn_z = block_norms_from_coeffs(zh, grid, L)
        a = self.acc
        a["lf_sup_n_eu"].accumulate_block_norms(bn_neu, t, 1.0)
        a["lf_l1_bn"].accumulate_block_norms(bn_n, t, b)
        a["lf_l1_u"].accumulate_block_norms(bn_u, t, 1.0)
        a["hf_sup"].accumulate_block_norms(bn_neu, t, eps * b)
        a["hf_l1"].accumulate_block_norms(bn_neu, t, 1.0 / eps)
        a["l2_bu"].accumulate_block_norms(bn_u, t, 1.0 / math.sqrt(b))
        a["l1_damped_mode"].accumulate_block_norms(bn_z, t, 1.0 / eps)
        self.history.append((t, self.total()))

    def terms(self) -> dict:
        return {k: acc.finalize(self._rho[k]) for k, acc in self.acc.items()}

    def total(self) -> float:
        return float(sum(self.terms().values()))

    def report(self) -> EnergyReport:
        if self.X0 is None:
            raise ValueError("tracker was never fed a state")
        terms = self.terms()
        total = float(sum(terms.values()))
        ratio = total / self.X0 if self.X0 > 0 else (0.0 if total == 0 else math.inf)
        return EnergyReport(terms, total, self.X0, ratio, self.history[-1][0])

    def ratio_history(self) -> np.ndarray:
        if not self.X0:
            return np.zeros(len(self.history))
        return np.array([x for _, x in self.history]) / self.X0


def energy_X(traj: Trajectory, p: PhysParams, k0: int = 2) -> EnergyReport:
    """X(t) at the end of ``traj``; uses an attached tracker or replays the stored snapshots."""
    for h in traj.hooks:
        if isinstance(h, EnergyTracker) and h.k0 == k0 and h.history:
            if h.history[0][0] != traj.times[0]:
                raise ValueError("energy tracker was not driven from the initial time")
            return h.report()
    tracker = EnergyTracker(p, traj.grid, k0)
    for s in traj.states:
        tracker(s)
    return tracker.report()


# ---------------------------------------------------------------------------
# relaxation error


@dataclass
class ErrorReport:
    epsilon: float
    lam: float
    form: str
    sup_err: float
    l1_high_err: float
    l1_vel_err: float

    @property
    def total(self) -> float:
        return self.sup_err + self.l1_high_err + self.l1_vel_err

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def error_norms(traj_e: Trajectory, traj_pm: Trajectory, p: PhysParams, k0: int = 2) -> ErrorReport:
    """Distance between the Euler run and the porous-medium run with Darcy velocity.

    lambda <= 0:  ||rho - rho*||_{Ltilde^inf B^{d/2-1}} + ||(1+t)^lam (rho - rho*)||_{L^1 B^{d/2+1}}
                  + ||u - u*||_{L^1 B^{d/2}}
    lambda > 0:   ||(1+t)^-lam (rho - rho*)||_{Ltilde^inf B^{d/2-1}} + ||rho - rho*||_{L^1 B^{d/2+1}}
                  + ||(1+t)^-lam (u - u*)||_{L^1 B^{d/2}}
    Time integrals are left-endpoint sums over the shared snapshot times.
    """
    if traj_e.grid != traj_pm.grid:
        raise ValueError("trajectories live on different grids")
    te, tp = np.asarray(traj_e.times), np.asarray(traj_pm.times)
    if te.shape != tp.shape or not np.allclose(te, tp, rtol=0, atol=1e-12):
        raise ValueError("trajectories do not share snapshot times")
    grid = traj_e.grid
    ladder = DyadicLadder.for_grid(grid, k0)
    sd = grid.dim / 2.0
    acc_sup = NormAccumulator(sd - 1, p, ladder)
    acc_l1 = NormAccumulator(sd + 1, p, ladder)
    acc_vel = NormAccumulator(sd, p, ladder)
    lam = p.lam
    for se, spm in zip(traj_e.states, traj_pm.states):
        t = se.t
        diff = grid.fft(rho_of_n(se.n.values, p) - spm.rho_star.values)
        ustar = darcy_velocity(spm, p)
        du = se.u_coefficients() - np.stack([c.coefficients for c in ustar])
        bn_rho = block_norms_from_coeffs(diff, grid, ladder)
        bn_u = block_norms_from_coeffs(du, grid, ladder)
        w = (1.0 + t) ** (-lam)
        if lam <= 0:
            ws, wl, wv = 1.0, (1.0 + t) ** lam, 1.0
        else:
            ws, wl, wv = w, 1.0, w
        acc_sup.accumulate_block_norms(bn_rho, t, ws)
        acc_l1.accumulate_block_norms(bn_rho, t, wl)
        acc_vel.accumulate_block_norms(bn_u, t, wv)
    return ErrorReport(p.epsilon, lam, "error1" if lam <= 0 else "error2", acc_sup.finalize(np.inf),
                       acc_l1.finalize(1), acc_vel.finalize(1))


def fit_rate(pairs) -> tuple[float, float, float]:
    """Least-squares line through (ln eps, ln err): (slope, intercept, rms residual)."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least three (epsilon, error) pairs")
    if np.any(~(arr > 0)):
        raise ValueError("epsilon and error must be positive")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


# ---------------------------------------------------------------------------
# ODE comparison lemma


@dataclass
class OdeLemmaReport:
    times: np.ndarray
    X: np.ndarray
    slack_basic: np.ndarray
    slack_growth: np.ndarray
    tol: float

    @property
    def min_slack_basic(self) -> float:
        return float(np.min(self.slack_basic))

    @property
    def min_slack_growth(self) -> float:
        return float(np.min(self.slack_growth))

    @property
    def holds(self) -> bool:
        return self.min_slack_basic >= -self.tol and self.min_slack_growth >= -self.tol

    def to_dict(self) -> dict:
        return {"min_slack_basic": self.min_slack_basic, "min_slack_growth": self.min_slack_growth,
                "tol": self.tol, "holds": self.holds}


def _derivative(fun, t, h=1e-6):
    return (fun(t + h) - fun(t - h)) / (2 * h)


def verify_ode_lemma(f: Callable, c: Callable, A: Callable, alpha: float, T0: float = 0.0, T1: float = 1.0,
                     fprime: Callable | None = None, X0: float = 1.0, n_samples: int = 401,
                     tol: float = 1e-8) -> OdeLemmaReport:
    """Build the equality case d/dt(f X^2) + c X^2 = A X and test both conclusions.

    basic:   2 f X(t) + int (c - f') X  <=  2 f(T0) X(T0) + int A
    growth:  2 f X(t) + int (c + alpha f') X  <=  (f(t)/f(T0))^{(1+alpha)/2} (2 f(T0) X(T0) + int A)

    Slack is RHS - LHS scaled by max(1, |RHS|); the report holds when both
    minima are >= -tol.
    """
    fp = fprime or (lambda t: _derivative(f, t))
    ts = np.linspace(T0, T1, n_samples)
    fv = np.array([f(t) for t in ts])
    fpv = np.array([fp(t) for t in ts])
    cv = np.array([c(t) for t in ts])
    Av = np.array([A(t) for t in ts])
    if np.any(fv <= 0):
        raise ValueError("f must be positive")
    if np.any(fpv < -1e-12):
        raise ValueError("hypothesis violated: f' must be nonnegative")
    if np.any(Av < 0):
        raise ValueError("hypothesis violated: A must be nonnegative")
    if not alpha > 0 or np.any(cv + alpha * fpv < -1e-12):
        raise ValueError("hypothesis violated: need alpha > 0 and c + alpha f' >= 0")
    if not X0 >= 0:
        raise ValueError("X0 must be nonnegative")

    def rhs(t, y):
        X = max(y[0], 0.0)
        ft, fpt, ct, At = f(t), fp(t), c(t), A(t)
        return [(At - (ct + fpt) * X) / (2 * ft), (ct - fpt) * X, (ct + alpha * fpt) * X, At]

    sol = solve_ivp(rhs, (T0, T1), [X0, 0.0, 0.0, 0.0], method="DOP853", t_eval=ts, rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise RuntimeError(sol.message)
    X, I_basic, I_growth, I_A = sol.y
    base = 2 * f(T0) * X0 + I_A
    lhs_b = 2 * fv * X + I_basic
    lhs_g = 2 * fv * X + I_growth
    rhs_g = (fv / f(T0)) ** ((1 + alpha) / 2) * base
    slack_b = (base - lhs_b) / np.maximum(1.0, np.abs(base))
    slack_g = (rhs_g - lhs_g) / np.maximum(1.0, np.abs(rhs_g))
    return OdeLemmaReport(ts, X, slack_b, slack_g, tol)


# ---------------------------------------------------------------------------
# maximal regularity for v_t - b(t) Lap v = f


@dataclass
class MaxRegReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    literal_margin: float
    tol: float

    @property
    def max_violation(self) -> float:
        """max over t of (lhs - rhs) / rhs; <= 0 when the estimate holds."""
        scale = np.maximum(self.rhs, 1e-300)
        return float(np.max((self.lhs - self.rhs) / scale))

    @property
    def holds(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        return {"max_violation": self.max_violation, "literal_margin": self.literal_margin, "tol": self.tol,
                "holds": self.holds}


def _simpson_cumulative(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cumulative integral along axis 0: Simpson on pairs of intervals, trapezoid on the odd remainder."""
    out = np.zeros_like(y)
    for i in range(1, len(t)):
        if i % 2 == 0:
            h = t[i] - t[i - 2]
            out[i] = out[i - 2] + h / 6.0 * (y[i - 2] + 4 * y[i - 1] + y[i])
        else:
            out[i] = out[i - 1] + 0.5 * (t[i] - t[i - 1]) * (y[i - 1] + y[i])
    return out


def verify_maximal_regularity(v0: SpectralField, forcing, p: PhysParams, s: float, T: float = 1.0,
                              n_times: int = 2001, tol: float = 1e-6, c_star: float = C_STAR) -> MaxRegReport:
    """Check ||v(t)||_{B^s} + c* int_0^t b ||v||_{B^{s+2}} <= ||v0||_{B^s} + int_0^t ||f||_{B^s} for every t.

    v solves the dissipative flow v_t - b(t) Lap v = f, integrated per mode.
    ``forcing`` is None, a callable t -> coefficient array, or a pair
    (times, coefficient arrays) interpolated linearly in time.  The report
    also records the margin of the sup-in-time form (not asserted).
    """
    grid = v0.grid
    ladder = DyadicLadder.for_grid(grid)
    k2 = (grid.kmag**2).ravel()
    c0 = v0.coefficients.ravel().copy()
    c0[0] = 0.0
    if forcing is None:
        fhat = None
    elif callable(forcing):
        fhat = lambda t: np.asarray(forcing(t), dtype=complex).ravel()
    else:
        ft, fc = forcing
        ft = np.asarray(ft, dtype=float)
        fc = np.stack([np.asarray(a, dtype=complex).ravel() for a in fc])
        fhat = lambda t: np.array([np.interp(t, ft, fc[:, i].real) + 1j * np.interp(t, ft, fc[:, i].imag)
                                   for i in range(fc.shape[1])])
    ts = np.linspace(0.0, T, n_times)
    nm = c0.size
    if fhat is None:
        # closed form: v(t) = exp(-|xi|^2 B(t)) v0
        V = np.exp(-np.outer(damping_B_integral(ts, p), k2)) * c0
        F = np.zeros_like(V)
    else:
        def rhs(t, y):
            v = y[:nm] + 1j * y[nm:]
            dv = -damping_b(t, p) * k2 * v + fhat(t)
            return np.concatenate([dv.real, dv.imag])

        sol = solve_ivp(rhs, (0.0, T), np.concatenate([c0.real, c0.imag]), method="DOP853", t_eval=ts,
                        rtol=1e-12, atol=1e-14 * max(1.0, float(np.max(np.abs(c0)))))
        if not sol.success:
            raise RuntimeError(sol.message)
        V = (sol.y[:nm] + 1j * sol.y[nm:]).T
        F = np.stack([fhat(t) for t in ts])
    F[:, 0] = 0.0
    j = ladder.indices
    bn_v = np.stack([block_norms_from_coeffs(V[i].reshape(grid.shape), grid, ladder) for i in range(n_times)])
    bn_f = np.stack([block_norms_from_coeffs(F[i].reshape(grid.shape), grid, ladder) for i in range(n_times)])
    bvals = damping_b(ts, p)
    norm_v = bn_v @ 2.0 ** (s * j)
    diss = (bvals[:, None] * bn_v) @ 2.0 ** ((s + 2) * j)
    norm_f = bn_f @ 2.0 ** (s * j)
    I_diss = _simpson_cumulative(diss, ts)
    I_f = _simpson_cumulative(norm_f, ts)
    lhs = norm_v + c_star * I_diss
    rhs = norm_v[0] + I_f
    literal = float(np.max(norm_v) + c_star * I_diss[-1] - rhs[-1])
    return MaxRegReport(ts, lhs, rhs, literal, tol)
