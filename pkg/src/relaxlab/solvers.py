"""Nonlinear solvers for the damped Euler system in (n, u) form and for its
porous-medium limit, initial-data families and the blow-up monitor.

Euler step (Strang):  linear half-step  ->  explicit nonlinear step  ->  linear half-step.
The linear part (pressure coupling plus friction) is advanced per Fourier mode
by the Magnus propagator of :mod:`relaxlab.linear`, so the explicit stage only
sees the transport terms.  Nonlinear products are dealiased with the 2/3 rule.

Porous-medium step (Strang):  exact heat factor with diffusivity b(t) P'(rho_bar),
explicit SSP-RK3 step for b(t) Lap R(rho) where R is the superlinear part of P.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linear import (DEFAULT_ATOL, DEFAULT_RTOL, incompressible_factor, join_velocity, propagator_matrix,
                     split_velocity)
from .model import (RHO_MAX_FACTOR, RHO_MIN_FACTOR, AdmissibilityError, PhysParams, G_of_n,
                    damping_B_integral, damping_b, n_of_rho, pressure, pressure_prime, rho_of_n,
                    validate_params)
from .spectral import Grid, SpectralField, low_pass, threshold_J
from .storage import atomic_write_json, atomic_write_text, run_length

log = logging.getLogger(__name__)

MAX_AMPLITUDE = 0.5
DEFAULT_SNAPSHOTS = 200
DATA_KINDS = ("well-prepared", "ill-prepared-O1", "ill-prepared-singular", "filtered-small-velocity", "gap-controlled")


class BlowUpDetected(RuntimeError):
    """Raised when the monitor fires; carries the time, trigger and the partial trajectory."""

    def __init__(self, t: float, trigger: str, detail: str = "", trajectory=None):
        super().__init__(f"blow-up monitor fired at t={t:.6g} ({trigger}) {detail}".rstrip())
        self.t = t
        self.trigger = trigger
        self.detail = detail
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# states


@dataclass
class EulerState:
    n: SpectralField
    u: list[SpectralField]
    t: float = 0.0

    def __post_init__(self):
        if len(self.u) != self.n.grid.dim:
            raise ValueError(f"velocity needs {self.n.grid.dim} components, got {len(self.u)}")

    @property
    def grid(self) -> Grid:
        return self.n.grid

    @classmethod
    def from_coefficients(cls, grid: Grid, n_hat, u_hat, t: float) -> "EulerState":
        return cls(SpectralField.from_coefficients(grid, n_hat),
                   [SpectralField.from_coefficients(grid, c) for c in u_hat], t)

    @classmethod
    def equilibrium(cls, grid: Grid, t: float = 0.0) -> "EulerState":
        return cls(SpectralField.zeros(grid), [SpectralField.zeros(grid) for _ in range(grid.dim)], t)

    def u_coefficients(self) -> np.ndarray:
        return np.stack([c.coefficients for c in self.u])

    def u_values(self) -> np.ndarray:
        return np.stack([c.values for c in self.u])

    def density(self, p: PhysParams) -> np.ndarray:
        return rho_of_n(self.n.values, p)

    def mass(self, p: PhysParams) -> float:
        return float(np.mean(self.density(p))) * self.grid.length**self.grid.dim


@dataclass
class PMState:
    rho_star: SpectralField
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.rho_star.grid

    def mass(self) -> float:
        return self.rho_star.mean() * self.grid.length**self.grid.dim


def check_admissible(rho: np.ndarray, p: PhysParams) -> None:
    lo, hi = RHO_MIN_FACTOR * p.rho_bar, RHO_MAX_FACTOR * p.rho_bar
    if not np.all(np.isfinite(rho)):
        raise AdmissibilityError("non-finite density")
    rmin, rmax = float(np.min(rho)), float(np.max(rho))
    if rmin < lo or rmax > hi:
        raise AdmissibilityError(f"density range [{rmin:.4g}, {rmax:.4g}] leaves [{lo:.4g}, {hi:.4g}]")


# ---------------------------------------------------------------------------
# trajectory container


Hook = Callable[[object, float], None]


@dataclass
class Trajectory:
    """Snapshots of one run plus its bookkeeping.

    Hooks are called as ``hook(state, dt)`` on the initial state (dt = 0) and
    after every accepted step.
    """

    kind: str
    params: PhysParams
    grid: Grid
    scheme: str
    times: list[float] = field(default_factory=list)
    states: list = field(default_factory=list)
    dt_history: list[float] = field(default_factory=list)
    hooks: list[Hook] = field(default_factory=list)
    mass0: float = float("nan")
    mass_drift: float = 0.0
    blowup: dict | None = None
    notes: dict = field(default_factory=dict)

    def add_hook(self, hook: Hook) -> None:
        self.hooks.append(hook)

    def _record(self, state) -> None:
        if self.times and not state.t > self.times[-1]:
            raise ValueError("snapshot times must increase")
        self.times.append(float(state.t))
        self.states.append(state)

    @property
    def final(self):
        return self.states[-1]

    def at(self, t: float):
        for tt, s in zip(self.times, self.states):
            if abs(tt - t) <= 1e-12 * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot at t={t}")

    def field_rows(self) -> np.ndarray:
        rows = []
        for t, s in zip(self.times, self.states):
            if isinstance(s, EulerState):
                parts = [s.n.values.ravel()] + [c.values.ravel() for c in s.u]
            else:
                parts = [s.rho_star.values.ravel()]
            rows.append(np.concatenate([[t]] + parts))
        return np.array(rows)

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "scheme": self.scheme,
            "grid": self.grid.to_dict(),
            "params": self.params.to_dict(),
            "fields": ["n"] + [f"u{i + 1}" for i in range(self.grid.dim)] if self.kind == "euler" else ["rho_star"],
            "n_snapshots": len(self.times),
            "n_steps": len(self.dt_history),
            "dt_history": run_length(self.dt_history),
            "mass0": self.mass0,
            "mass_drift": self.mass_drift,
            "blowup": self.blowup,
        }

    def export(self, directory, stem: str) -> tuple:
        """Plain table (time, then field values row-major, %.17g) plus a JSON manifest."""
        rows = self.field_rows()
        lines = [" ".join("%.17g" % v for v in row) for row in rows]
        table = atomic_write_text(f"{directory}/{stem}.txt", "\n".join(lines) + "\n")
        man = atomic_write_json(f"{directory}/{stem}.json", self.manifest())
        return table, man


# ---------------------------------------------------------------------------
# step-size policy


@dataclass(frozen=True)
class DtPolicy:
    """dt = min(cfl dx / (max|u| + c_fast), T / steps_per_T), optionally graded near t = 0.

    ``layer_fraction`` caps dt by layer_fraction * (eps^2 b(t) + t) so that the
    initial relaxation layer of width ~ eps^2 b is resolved by the time
    quadratures of the diagnostics.  ``fixed`` overrides everything.
    """

    cfl: float = 0.4
    steps_per_T: int = 10_000
    fixed: float | None = None
    recompute_every: int = 10
    layer_fraction: float | None = None

    def __post_init__(self):
        if not self.cfl > 0 or self.steps_per_T < 1 or self.recompute_every < 1:
            raise ValueError("invalid dt policy")
        if self.fixed is not None and not self.fixed > 0:
            raise ValueError("fixed dt must be positive")

    def to_dict(self) -> dict:
        return {"cfl": self.cfl, "steps_per_T": self.steps_per_T, "fixed": self.fixed,
                "recompute_every": self.recompute_every, "layer_fraction": self.layer_fraction}

    def layer_cap(self, t: float, p: PhysParams) -> float:
        if self.layer_fraction is None:
            return math.inf
        return self.layer_fraction * (p.epsilon**2 * damping_b(t, p) + t)


def euler_advective_dt(state: EulerState, p: PhysParams, cfl: float, nonlinear: bool = True) -> float:
    umax = float(np.max(np.abs(state.u_values()))) if nonlinear else 0.0
    c_fast = math.sqrt(2.0 * p.sound_speed_sq) / p.epsilon if nonlinear else 0.0
    speed = umax + c_fast
    return math.inf if speed == 0 else cfl * state.grid.dx / speed


def pm_explicit_dt(state: PMState, p: PhysParams, cfl: float) -> float:
    """Stability cap of the explicit remainder stage (diffusivity b |P'(rho) - P'(rho_bar)|)."""
    rho = state.rho_star.values
    d = damping_b(state.t, p) * float(np.max(np.abs(pressure_prime(rho, p) - p.sound_speed_sq)))
    if d == 0:
        return math.inf
    g = state.grid
    kcut = math.sqrt(g.dim) * (g.n_points / 3.0) * g.k_min
    return cfl * 2.5 / (d * kcut**2)


def _snapshot_targets(T: float, cadence) -> np.ndarray | None:
    if cadence in ("all", None, 0):
        return None
    cadence = int(cadence)
    if cadence < 1:
        raise ValueError("snapshot cadence must be positive")
    return np.linspace(0.0, T, cadence + 1)[1:]


# ---------------------------------------------------------------------------
# blow-up monitor


@dataclass(frozen=True)
class MonitorCaps:
    gradient_cap: float = math.inf
    integral_budget: float = math.inf
    check_admissibility: bool = True

    @classmethod
    def relative_to(cls, state: EulerState, T: float, gradient_factor: float = 1e3,
                    budget_factor: float = 1e3) -> "MonitorCaps":
        """Caps scaled by the initial gradient g0: factor * g0 and budget_factor * g0 * (1 + T)."""
        g0 = max(gradient_sup(state), 1e-300)
        return cls(gradient_factor * g0, budget_factor * g0 * (1.0 + T))


def gradient_sup(state: EulerState) -> float:
    """||grad(n, u)||_{L^inf}: largest entry of grad n and of the velocity Jacobian."""
    g = state.grid
    k = g.wavenumbers
    d = g.dim
    uh = state.u_coefficients()
    spec = np.concatenate([1j * k * state.n.coefficients, (1j * k[:, None] * uh[None]).reshape((d * d,) + g.shape)])
    return float(np.max(np.abs(g.ifft(spec))))


def blowup_monitor(s: EulerState, caps: MonitorCaps, p: PhysParams, gradient_integral: float = 0.0) -> str | None:
    """Return the name of the first trigger that fires, or None."""
    if not (np.all(np.isfinite(s.n.values)) and np.all(np.isfinite(s.u_values()))):
        return "nan"
    if caps.check_admissibility:
        try:
            check_admissible(s.density(p), p)
        except AdmissibilityError:
            return "admissibility"
    if gradient_sup(s) > caps.gradient_cap:
        return "gradient-cap"
    if gradient_integral > caps.integral_budget:
        return "gradient-integral"
    return None


def high_frequency_energy(state: EulerState, p: PhysParams, cutoff: float | None = None) -> float:
    """Energy of (n, eps u) in modes with |xi| >= cutoff (default: half the dealiased band)."""
    g = state.grid
    if cutoff is None:
        cutoff = 0.5 * (g.n_points / 3.0) * g.k_min
    sel = g.kmag >= cutoff
    e = np.sum(np.abs(state.n.coefficients[sel]) ** 2)
    for c in state.u:
        e += p.epsilon**2 * np.sum(np.abs(c.coefficients[sel]) ** 2)
    return float(e) * g.parseval_scale**2


# ---------------------------------------------------------------------------
# Euler step


def _linear_flow(n_hat, u_hat, t0, t1, grid: Grid, p: PhysParams, rtol, atol):
    eps = p.epsilon
    m_hat, om_hat, mean = split_velocity(u_hat, grid, eps)
    uniq, inv = grid.radial_index
    p11, p12, p21, p22 = (a[inv] for a in propagator_matrix(uniq, t0, t1, p, rtol, atol))
    n_new = p11 * n_hat + p12 * m_hat
    m_new = p21 * n_hat + p22 * m_hat
    # the mean of n is a conserved quantity; keep it bit-exact
    n_new.flat[0] = n_hat.flat[0]
    fac = incompressible_factor(t0, t1, p)
    if om_hat is not None:
        om_hat = om_hat * fac
    u_new = join_velocity(m_new, om_hat, mean * fac, grid, eps)
    keep = grid.nyquist_free
    return n_new * keep, u_new * keep


def _nonlinear_rhs(n_hat, u_hat, grid: Grid, p: PhysParams):
    """Dealiased {-u.grad n - G(n) div u, -u.grad u} in coefficient space."""
    mask = grid.dealias_mask
    k = grid.wavenumbers
    d = grid.dim
    nh = n_hat * mask
    uh = u_hat * mask
    # one batched inverse transform: n, u, grad u (and grad n when needed)
    parts = [nh[None], uh, (1j * k[:, None] * uh[None]).reshape((d * d,) + grid.shape)]
    if p.gamma != 2.0:
        parts.append(1j * k * nh)
    vals = grid.ifft(np.concatenate(parts))
    n = vals[0]
    u = vals[1:1 + d]
    du = vals[1 + d:1 + d + d * d].reshape((d, d) + grid.shape)  # du[i, c] = d_i u_c
    adv_u = np.sum(u[:, None] * du, axis=0)
    if p.gamma == 2.0:
        # G(n) = n: the residual is -div(n u), kept in conservation form
        out = grid.fft(np.concatenate([n * u, adv_u]))
        rn_hat = -1j * np.sum(k * out[:d], axis=0)
    else:
        grad_n = vals[1 + d + d * d:]
        div_u = sum(du[i, i] for i in range(d))
        rn = -np.sum(u * grad_n, axis=0) - G_of_n(n, p) * div_u
        out = grid.fft(np.concatenate([rn[None], adv_u]))
        rn_hat = out[0]
    ru_hat = -out[d:] if p.gamma == 2.0 else -out[1:]
    return rn_hat * mask, ru_hat * mask


def _ssp_rk3(y, dt, rhs):
    """Shu-Osher SSP-RK3 on a tuple of arrays."""
    def axpy(a, x, b, z):
        return tuple(a * xi + b * zi for xi, zi in zip(x, z))

    k1 = rhs(y)
    y1 = tuple(yi + dt * ki for yi, ki in zip(y, k1))
    k2 = rhs(y1)
    y2 = axpy(0.75, y, 0.25, tuple(a + dt * b for a, b in zip(y1, k2)))
    k3 = rhs(y2)
    return axpy(1.0 / 3.0, y, 2.0 / 3.0, tuple(a + dt * b for a, b in zip(y2, k3)))


def _euler_advance(s: EulerState, t1: float, p: PhysParams, nonlinear=True, rtol=DEFAULT_RTOL,
                   atol=DEFAULT_ATOL) -> EulerState:
    grid = s.grid
    t0 = s.t
    dt = t1 - t0
    th = t0 + 0.5 * dt
    keep = grid.nyquist_free
    n_hat = s.n.coefficients * keep
    u_hat = s.u_coefficients() * keep
    n_hat, u_hat = _linear_flow(n_hat, u_hat, t0, th, grid, p, rtol, atol)
    if nonlinear:
        n_hat, u_hat = _ssp_rk3((n_hat, u_hat), dt, lambda y: _nonlinear_rhs(y[0], y[1], grid, p))
    n_hat, u_hat = _linear_flow(n_hat, u_hat, th, t1, grid, p, rtol, atol)
    return EulerState.from_coefficients(grid, n_hat, u_hat, t1)


def euler_step(s: EulerState, dt: float, p: PhysParams, nonlinear: bool = True, rtol=DEFAULT_RTOL,
               atol=DEFAULT_ATOL) -> EulerState:
    """One Strang step of length dt.

    Raises AdmissibilityError if the nonlinear stage leaves the admissible
    density window.  ``nonlinear=False`` keeps only the per-mode linear flow.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = _euler_advance(s, s.t + dt, p, nonlinear, rtol, atol)
    if nonlinear:
        check_admissible(out.density(p), p)
    return out


# ---------------------------------------------------------------------------
# drivers


def _march(state, T, trajectory: Trajectory, advance, dt_of, snapshot_cadence, on_step=None, times=None):
    """Generic time loop landing exactly on snapshot (or prescribed) times."""
    for h in trajectory.hooks:
        h(state, 0.0)
    trajectory._record(state)
    if times is not None:
        targets = np.asarray(times, dtype=float)
        targets = targets[targets > state.t]
        store_all = True
        schedule = iter(targets)
    else:
        snaps = _snapshot_targets(T, snapshot_cadence)
        store_all = snaps is None
        schedule = None
    snap_idx = 0
    step = 0
    while True:
        if schedule is not None:
            t_next = next(schedule, None)
            if t_next is None:
                break
        else:
            if state.t >= T:
                break
            dt = dt_of(state, step)
            t_next = state.t + dt
            bound = T if store_all else snaps[snap_idx]
            # avoid slivers: stretch onto the bound if within 1% of a step
            if t_next >= bound or bound - t_next < 1e-2 * dt:
                t_next = bound
        new = advance(state, float(t_next))
        trajectory.dt_history.append(float(t_next - state.t))
        step += 1
        state = new
        if on_step is not None:
            on_step(state, trajectory.dt_history[-1])
        for h in trajectory.hooks:
            h(state, trajectory.dt_history[-1])
        if store_all:
            trajectory._record(state)
        elif state.t == snaps[snap_idx]:
            trajectory._record(state)
            snap_idx += 1
    return trajectory


def run_euler(init: EulerState, T: float, p: PhysParams, dt_policy: DtPolicy | None = None,
              snapshot_cadence=DEFAULT_SNAPSHOTS, *, nonlinear: bool = True, hooks: Sequence[Hook] = (),
              monitor: MonitorCaps | bool | None = None, times=None, rtol=DEFAULT_RTOL,
              atol=DEFAULT_ATOL) -> Trajectory:
    """Integrate the (n, u) system from ``init.t`` to T.

    ``monitor=None`` uses caps relative to the initial gradient; ``False``
    keeps only the NaN and admissibility checks.  On a trigger the partial
    trajectory is attached to the raised BlowUpDetected.
    """
    if not T > init.t:
        raise ValueError("T must exceed the initial time")
    report = validate_params(p)
    policy = dt_policy or DtPolicy()
    if monitor is None:
        caps = MonitorCaps.relative_to(init, T)
    elif monitor is False:
        caps = MonitorCaps()
    else:
        caps = monitor
    traj = Trajectory("euler", p, init.grid, "strang(magnus4-linear, ssp-rk3-nonlinear, 2/3 dealias)"
                      if nonlinear else "magnus4-linear only", hooks=list(hooks))
    traj.notes["regime"] = report.to_dict()
    traj.notes["dt_policy"] = policy.to_dict()
    first = blowup_monitor(init, caps, p) if nonlinear else None
    if first is not None:
        raise BlowUpDetected(init.t, first, "initial state", traj)
    traj.mass0 = init.mass(p)
    dt_max = (T - init.t) / policy.steps_per_T
    cache = {"adv": math.inf}
    integral = [0.0]

    def dt_of(state, step):
        if policy.fixed is not None:
            return policy.fixed
        if step % policy.recompute_every == 0:
            cache["adv"] = euler_advective_dt(state, p, policy.cfl, nonlinear)
        return min(cache["adv"], dt_max, policy.layer_cap(state.t, p))

    def advance(state, t1):
        try:
            return _euler_advance(state, t1, p, nonlinear, rtol, atol)
        except AdmissibilityError as exc:
            traj.blowup = {"t": state.t, "trigger": "admissibility"}
            raise BlowUpDetected(state.t, "admissibility", str(exc), traj) from exc

    def on_step(state, dt):
        if nonlinear:
            integral[0] += dt * gradient_sup(state)
            trig = blowup_monitor(state, caps, p, integral[0])
            if trig is not None:
                traj.blowup = {"t": state.t, "trigger": trig}
                if state.t > traj.times[-1]:
                    traj._record(state)
                raise BlowUpDetected(state.t, trig, "", traj)
        drift = abs(state.mass(p) - traj.mass0) / abs(traj.mass0)
        traj.mass_drift = max(traj.mass_drift, drift)

    return _march(init, T, traj, advance, dt_of, snapshot_cadence, on_step, times)


# ---------------------------------------------------------------------------
# porous-medium limit


def _pm_remainder(rho, p: PhysParams):
    """P(rho) - P(rho_bar) - P'(rho_bar)(rho - rho_bar)."""
    return pressure(rho, p) - pressure(p.rho_bar, p) - p.sound_speed_sq * (rho - p.rho_bar)


def _pm_advance(s: PMState, t1: float, p: PhysParams) -> PMState:
    grid = s.grid
    t0 = s.t
    dt = t1 - t0
    th = t0 + 0.5 * dt
    k2 = grid.kmag**2
    c2 = p.sound_speed_sq
    mask = grid.dealias_mask
    B0, Bh, B1 = (damping_B_integral(t, p) for t in (t0, th, t1))
    c = s.rho_star.coefficients * grid.nyquist_free
    c = c * np.exp(-c2 * k2 * (Bh - B0))
    stage_t = iter((t0, t1, th))

    def rhs(y):
        tt = next(stage_t)
        rho = grid.ifft(y[0] * mask)
        return (-damping_b(tt, p) * k2 * grid.fft(_pm_remainder(rho, p)) * mask,)

    (c,) = _ssp_rk3((c,), dt, rhs)
    c = c * np.exp(-c2 * k2 * (B1 - Bh))
    return PMState(SpectralField.from_coefficients(grid, c), t1)


def pm_step(s: PMState, dt: float, p: PhysParams) -> PMState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = _pm_advance(s, s.t + dt, p)
    check_admissible(out.rho_star.values, p)
    return out


def run_porous_medium(init: PMState, T: float, p: PhysParams, dt_policy: DtPolicy | None = None,
                      snapshot_cadence=DEFAULT_SNAPSHOTS, *, hooks: Sequence[Hook] = (), times=None) -> Trajectory:
    """Integrate rho_t = b(t) Lap P(rho) to T; ``times`` prescribes every step end point."""
    if not T > init.t:
        raise ValueError("T must exceed the initial time")
    check_admissible(init.rho_star.values, p)
    policy = dt_policy or DtPolicy()
    traj = Trajectory("porous-medium", p, init.grid, "strang(exact heat, ssp-rk3 remainder, 2/3 dealias)",
                      hooks=list(hooks))
    traj.notes["dt_policy"] = policy.to_dict()
    traj.mass0 = init.mass()
    dt_max = (T - init.t) / policy.steps_per_T
    cache = {"exp": math.inf}

    def dt_of(state, step):
        if policy.fixed is not None:
            return policy.fixed
        if step % policy.recompute_every == 0:
            cache["exp"] = pm_explicit_dt(state, p, policy.cfl)
        return min(cache["exp"], dt_max, policy.layer_cap(state.t, p))

    def advance(state, t1):
        out = _pm_advance(state, t1, p)
        try:
            check_admissible(out.rho_star.values, p)
        except AdmissibilityError as exc:
            traj.blowup = {"t": state.t, "trigger": "admissibility"}
            raise BlowUpDetected(state.t, "admissibility", str(exc), traj) from exc
        return out

    def on_step(state, dt):
        traj.mass_drift = max(traj.mass_drift, abs(state.mass() - traj.mass0) / abs(traj.mass0))

    return _march(init, T, traj, advance, dt_of, snapshot_cadence, on_step, times)


def darcy_velocity(s: PMState, p: PhysParams) -> list[SpectralField]:
    """u* = -b(t) grad P(rho*) / rho*, evaluated as -b(t) grad n(rho*) (same field, exact identity)."""
    grid = s.grid
    n = SpectralField(grid, values=n_of_rho(s.rho_star.values, p))
    c = n.coefficients * grid.nyquist_free
    b = damping_b(s.t, p)
    return [SpectralField.from_coefficients(grid, -b * 1j * k * c) for k in grid.wavenumbers]


# ---------------------------------------------------------------------------
# initial data


def periodic_gaussian(grid: Grid, width: float = 1.0, center=None) -> np.ndarray:
    """exp(-|x - c|^2 / width^2) summed over the nearest periodic images."""
    center = np.zeros(grid.dim) if center is None else np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    L = grid.length
    out = np.zeros(grid.shape)
    shifts = np.array(np.meshgrid(*([np.array([-1, 0, 1])] * grid.dim), indexing="ij")).reshape(grid.dim, -1).T
    for sh in shifts:
        r2 = sum((grid.x[i] - center[i] - sh[i] * L) ** 2 for i in range(grid.dim))
        out += np.exp(-r2 / width**2)
    return out


def velocity_profile(grid: Grid, width: float = 1.0) -> np.ndarray:
    """Fixed curl-free, divergence-full profile 2 (x / w) exp(-|x|^2 / w^2), zero mean by oddness."""
    g = periodic_gaussian(grid, width)
    # x on [-L/2, L/2); the profile is negligible at the box edge
    return np.stack([2.0 * grid.x[i] / width * g for i in range(grid.dim)])


def gap_profile(grid: Grid, width: float = 1.0) -> np.ndarray:
    """Fixed zero-mean density perturbation, shifted and wider than the base bump."""
    g = periodic_gaussian(grid, 1.5 * width, center=width)
    return g - g.mean()


def parse_kind(kind: str, q: float | None = None) -> tuple[str, float | None]:
    m = re.fullmatch(r"gap-controlled\(([^)]+)\)", kind)
    if m:
        return "gap-controlled", float(m.group(1))
    if kind not in DATA_KINDS:
        raise ValueError(f"unknown initial-data kind {kind!r}; expected one of {DATA_KINDS}")
    if kind == "gap-controlled":
        if q is None or not q > 0:
            raise ValueError("gap-controlled data needs q > 0")
    return kind, q


def build_initial_data(kind: str, p: PhysParams, grid: Grid, amplitude: float, q: float | None = None,
                       width: float = 1.0, k0: int = 2) -> tuple[EulerState, PMState]:
    """Euler and porous-medium initial states of the requested family."""
    kind, q = parse_kind(kind, q)
    if grid.dim != p.dim:
        raise ValueError("grid and params disagree on the dimension")
    if not 0 < amplitude <= MAX_AMPLITUDE:
        raise ValueError(f"amplitude must lie in (0, {MAX_AMPLITUDE}], got {amplitude}")
    keep = grid.nyquist_free

    def clean(values):
        return SpectralField.from_coefficients(grid, grid.fft(values) * keep)

    bump = periodic_gaussian(grid, width)
    rho_star = clean(p.rho_bar + amplitude * (bump - bump.mean()))
    pm = PMState(rho_star, 0.0)
    check_admissible(rho_star.values, p)
    eps = p.epsilon
    rho0 = rho_star
    if kind == "well-prepared":
        u0 = darcy_velocity(pm, p)
    elif kind == "ill-prepared-O1":
        u0 = [clean(c) for c in amplitude * velocity_profile(grid, width)]
    elif kind == "ill-prepared-singular":
        u0 = [clean(c) for c in amplitude * velocity_profile(grid, width) / eps]
    elif kind == "filtered-small-velocity":
        rho0 = low_pass(rho_star, threshold_J(0.0, p, k0))
        g = periodic_gaussian(grid, 1.0)
        u0 = [clean(eps * g) for _ in range(grid.dim)]
    else:  # gap-controlled
        rho0 = clean(rho_star.values + eps**q * amplitude * gap_profile(grid, width))
        u0 = darcy_velocity(PMState(rho0, 0.0), p)
    check_admissible(rho0.values, p)
    n0 = clean(n_of_rho(rho0.values, p))
    return EulerState(n0, u0, 0.0), pm
