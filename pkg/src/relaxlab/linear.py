"""Per-mode linear dynamics: eigenvalues, the 2x2 acoustic-damping system,
the damped wave equation and the time-dependent heat flow.

The nonautonomous 2x2 systems are advanced with a fourth-order Magnus scheme
(two Gauss points, one commutator) whose exponentials are evaluated in closed
form, vectorised over all modes.  Step size is chosen by step doubling; the
doubled result is Richardson-corrected before acceptance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import PhysParams, damping_B_integral, damping_b, damping_invb_integral
from .spectral import Grid, SpectralField, threshold_J

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
MAX_STEPS = 200_000

_SQ3 = np.sqrt(3.0)
_GAUSS = (0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0)


class ToleranceNotMet(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# spectrum of the linearised operator


def eigenvalues(xi_mag, t, p: PhysParams):
    """Roots of the per-mode symbol; lambda_+ carries the +i branch when complex."""
    b = damping_b(t, p)
    eps = p.epsilon
    disc = np.asarray(1.0 / (eps**2 * b**2) - 4.0 * p.sound_speed_sq * np.asarray(xi_mag, dtype=float) ** 2)
    root = np.where(disc >= 0, np.sqrt(np.abs(disc)) + 0j, 1j * np.sqrt(np.abs(disc)))
    centre = -1.0 / (2.0 * eps**2 * b)
    lp = centre + root / (2.0 * eps)
    lm = centre - root / (2.0 * eps)
    # real roots: the small one cancels, take it from the product instead
    det = p.sound_speed_sq * np.asarray(xi_mag, dtype=float) ** 2 / eps**2
    real = disc > 0
    lp = np.where(real, det / np.where(real, lm, 1.0), lp)
    if lp.ndim == 0:
        return complex(lp), complex(lm)
    return lp, lm


def dyadic_index(xi_mag: float) -> float:
    """floor(log2 |xi|); -inf for the mean mode."""
    if xi_mag <= 0:
        return -np.inf
    return float(np.floor(np.log2(xi_mag)))


def classify_frequency(xi_mag: float, t: float, p: PhysParams, k0: int = 2) -> str:
    return "low" if dyadic_index(xi_mag) <= threshold_J(t, p, k0) else "high"


# ---------------------------------------------------------------------------
# Magnus engine for y' = A(t) y, A 2x2 per mode


@dataclass(frozen=True)
class ModeSystem:
    """y' = [[d11(t), a12], [a21, d22(t)]] y for a stack of modes.

    Off-diagonals are constant per mode and the diagonal is mode independent,
    which covers both the acoustic-damping pair and the first-order form of the
    damped wave.  With this structure the Magnus commutator only rescales the
    off-diagonals, so one step costs a handful of array operations.
    """

    a12: np.ndarray | float
    a21: np.ndarray | float
    diag: Callable[[float], tuple[float, float]]

    @property
    def prod(self):
        return self.a12 * self.a21


def _expm2_apply(tau, delta, o12, o21, w2, y0, y1):
    """exp(Omega) @ (y0, y1) with Omega = [[tau + delta, o12], [o21, tau - delta]], w2 = delta^2 + o12 o21.

    cosh-like when w2 >= 0, cos-like otherwise; built from exp(tau +- w) so
    stiff modes never overflow.
    """
    r = np.sqrt(np.abs(w2))
    hyper = w2 >= 0
    small = r < 1e-4
    r_safe = np.where(small, 1.0, r)
    # rejected trial steps may overflow; the caller sees non-finite values and shrinks h
    with np.errstate(over="ignore", invalid="ignore"):
        et = np.exp(tau)
        ep = np.exp(tau + r)
        em = np.exp(tau - r)
        ch = np.where(hyper, 0.5 * (ep + em), et * np.cos(r))
        sh = np.where(hyper, 0.5 * (ep - em), et * np.sin(r)) / r_safe
        if np.any(small):
            ch = np.where(small, et * (1.0 + 0.5 * w2), ch)
            sh = np.where(small, et * (1.0 + w2 / 6.0), sh)
        z0 = (ch + sh * delta) * y0 + (sh * o12) * y1
        z1 = (sh * o21) * y0 + (ch - sh * delta) * y1
    return z0, z1


def _magnus_step(sys: ModeSystem, t, h, y0, y1):
    """Fourth-order Magnus step (two Gauss points, one commutator)."""
    d1 = sys.diag(t + _GAUSS[0] * h)
    d2 = sys.diag(t + _GAUSS[1] * h)
    g = _SQ3 / 12.0 * h * h
    # [A2, A1] has zero diagonal and off-diagonals (a12 s, -a21 s)
    s = (d2[0] - d1[0]) + (d1[1] - d2[1])
    f12 = h + g * s
    f21 = h - g * s
    o11 = 0.5 * h * (d1[0] + d2[0])
    o22 = 0.5 * h * (d1[1] + d2[1])
    tau = 0.5 * (o11 + o22)
    delta = 0.5 * (o11 - o22)
    w2 = delta * delta + sys.prod * (f12 * f21)
    return _expm2_apply(tau, delta, sys.a12 * f12, sys.a21 * f21, w2, y0, y1)


def magnus_propagate(sys: ModeSystem, y0, y1, t0: float, t1: float, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
                     h0: float | None = None, max_steps: int = MAX_STEPS):
    """Advance (y0, y1) from t0 to t1 with step doubling and Richardson correction.

    Returns the new pair and the last accepted step size.
    """
    dtype = np.result_type(np.asarray(y0), np.asarray(y1), float)
    y0 = np.asarray(y0, dtype=dtype)
    y1 = np.asarray(y1, dtype=dtype)
    span = t1 - t0
    if span < 0:
        raise ValueError("t1 must not precede t0")
    if span == 0:
        return y0.copy(), y1.copy(), 0.0
    scale = max(np.max(np.abs(y0), initial=0.0), np.max(np.abs(y1), initial=0.0))
    if scale == 0.0:
        return y0.copy(), y1.copy(), span
    floor = atol * scale
    t = t0
    h = span if h0 is None else min(h0, span)
    steps = 0
    h_acc = h
    while t < t1:
        if steps >= max_steps:
            raise ToleranceNotMet(f"step budget {max_steps} exhausted at t={t:.6g}")
        steps += 1
        h = min(h, t1 - t)
        last = t + h >= t1 or (t1 - (t + h)) < 1e-14 * max(1.0, abs(t1))
        if last:
            h = t1 - t
        f0, f1 = _magnus_step(sys, t, h, y0, y1)
        m0, m1 = _magnus_step(sys, t, 0.5 * h, y0, y1)
        s0, s1 = _magnus_step(sys, t + 0.5 * h, 0.5 * h, m0, m1)
        d0 = (s0 - f0) / 15.0
        d1 = (s1 - f1) / 15.0
        n0 = s0 + d0
        n1 = s1 + d1
        with np.errstate(invalid="ignore"):
            err = max(np.max(np.abs(d0) / (floor + rtol * np.abs(n0)), initial=0.0),
                      np.max(np.abs(d1) / (floor + rtol * np.abs(n1)), initial=0.0))
        if not np.isfinite(err):
            h *= 0.25
            continue
        if err <= 1.0:
            t = t1 if last else t + h
            y0, y1 = n0, n1
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h_acc = h
            h = h * fac
        else:
            h = h * max(0.1, 0.9 * err ** -0.2)
    return y0, y1, h_acc


# ---------------------------------------------------------------------------
# compressible / incompressible system


@dataclass
class ModeState:
    """Amplitudes of one (or a stack of) Fourier modes.

    ``omega_hat`` is empty in one dimension and has one component in two.
    """

    n_hat: complex | np.ndarray
    m_hat: complex | np.ndarray
    omega_hat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))


def acoustic_coefficients(kmag, p: PhysParams) -> ModeSystem:
    """(n, m) system: entries 0, -P' |xi| / eps, |xi| / eps, -1 / (eps^2 b(t))."""
    kmag = np.asarray(kmag, dtype=float)
    eps = p.epsilon

    def diag(t):
        return 0.0, -1.0 / (eps**2 * damping_b(t, p))

    return ModeSystem(-p.sound_speed_sq * kmag / eps, kmag / eps, diag)


def incompressible_factor(t0: float, t1: float, p: PhysParams) -> float:
    return float(np.exp(-(damping_invb_integral(t1, p) - damping_invb_integral(t0, p)) / p.epsilon**2))


def propagator_matrix(kmag, t0, t1, p: PhysParams, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Real 2x2 propagator entries (P11, P12, P21, P22) of the (n, m) system for each |xi|."""
    kmag = np.asarray(kmag, dtype=float)
    sys = acoustic_coefficients(np.concatenate([kmag, kmag]), p)
    one = np.ones_like(kmag)
    zero = np.zeros_like(kmag)
    y0, y1, _ = magnus_propagate(sys, np.concatenate([one, zero]), np.concatenate([zero, one]), t0, t1, rtol, atol)
    n = kmag.size
    return y0[:n], y0[n:], y1[:n], y1[n:]


def propagate_modes(n_hat, m_hat, kmag, t0, t1, p: PhysParams, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Vectorised (n, m) propagation for arrays of modes sharing one time interval.

    The propagator is computed once per distinct |xi| (modes +-xi share it)
    and then applied to every mode.
    """
    kmag = np.asarray(kmag, dtype=float)
    uniq, inv = np.unique(kmag, return_inverse=True)
    inv = inv.reshape(kmag.shape)
    p11, p12, p21, p22 = (a[inv] for a in propagator_matrix(uniq, t0, t1, p, rtol, atol))
    return p11 * n_hat + p12 * m_hat, p21 * n_hat + p22 * m_hat


def propagate_mode(ms: ModeState, xi, t0: float, t1: float, p: PhysParams, tol: float = DEFAULT_RTOL) -> ModeState:
    if not t1 > t0 >= 0:
        raise ValueError("need t1 > t0 >= 0")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    kmag = float(np.sqrt(np.sum(xi**2)))
    n_new, m_new = propagate_modes(np.asarray(ms.n_hat), np.asarray(ms.m_hat), kmag, t0, t1, p,
                                   rtol=tol, atol=tol * 1e-2)
    omega = np.asarray(ms.omega_hat, dtype=complex) * incompressible_factor(t0, t1, p)
    if np.ndim(ms.n_hat) == 0:
        n_new, m_new = complex(n_new), complex(m_new)
    return ModeState(n_new, m_new, omega)


def split_velocity(u_hat: np.ndarray, grid: Grid, eps: float):
    """(m, omega, mean) from velocity coefficients of shape (dim, *shape).

    m = eps Lambda^{-1} div u and omega = eps Lambda^{-1} curl u (2-D only).
    """
    k = grid.wavenumbers
    kmag = grid.kmag
    safe = np.where(kmag > 0, kmag, 1.0)
    e = k / safe
    m_hat = 1j * eps * np.sum(e * u_hat, axis=0)
    m_hat.flat[0] = 0.0
    if grid.dim == 2:
        omega_hat = 1j * eps * (e[0] * u_hat[1] - e[1] * u_hat[0])
        omega_hat.flat[0] = 0.0
    else:
        omega_hat = None
    mean = u_hat.reshape(grid.dim, -1)[:, 0].copy()
    return m_hat, omega_hat, mean


def join_velocity(m_hat, omega_hat, mean, grid: Grid, eps: float) -> np.ndarray:
    k = grid.wavenumbers
    kmag = grid.kmag
    safe = np.where(kmag > 0, kmag, 1.0)
    e = k / safe
    u_hat = (-1j / eps) * e * m_hat
    if grid.dim == 2:
        eperp = np.stack([-e[1], e[0]])
        u_hat = u_hat + (-1j / eps) * eperp * omega_hat
    flat = u_hat.reshape(grid.dim, -1)
    flat[:, 0] = mean
    return u_hat


# ---------------------------------------------------------------------------
# damped wave vs time-dependent heat flow


@dataclass
class LinearTrajectory:
    times: np.ndarray
    fields: list[SpectralField]
    rates: list[SpectralField] | None = None

    def at(self, t: float) -> SpectralField:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12 * max(1.0, abs(t))))
        if idx.size == 0:
            raise KeyError(f"no snapshot at t={t}")
        return self.fields[int(idx[0])]


def _snapshot_times(T: float, snapshots) -> np.ndarray:
    if np.ndim(snapshots) == 0:
        times = np.linspace(0.0, T, int(snapshots) + 1)
    else:
        times = np.unique(np.concatenate([[0.0], np.asarray(snapshots, dtype=float), [T]]))
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("snapshot times must start at 0 and increase")
    return times


def solve_damped_wave(n0: SpectralField, n0_t: SpectralField, T: float, p: PhysParams, snapshots=50,
                      rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> LinearTrajectory:
    """n'' + P'(rho_bar)|xi|^2 n + n'/b(t) = 0 per Fourier mode."""
    if not T > 0:
        raise ValueError("T must be positive")
    grid = n0.grid
    times = _snapshot_times(T, snapshots)
    k2 = grid.kmag.ravel() ** 2
    c2 = p.sound_speed_sq

    sys = ModeSystem(1.0, -c2 * k2, lambda t: (0.0, -1.0 / damping_b(t, p)))

    y0 = n0.coefficients.ravel().astype(complex)
    y1 = n0_t.coefficients.ravel().astype(complex)
    fields = [n0]
    rates = [n0_t]
    h = None
    for ta, tb in zip(times[:-1], times[1:]):
        y0, y1, h = magnus_propagate(sys, y0, y1, ta, tb, rtol, atol, h0=h)
        fields.append(SpectralField.from_coefficients(grid, y0.reshape(grid.shape)))
        rates.append(SpectralField.from_coefficients(grid, y1.reshape(grid.shape)))
    return LinearTrajectory(times, fields, rates)


def solve_heat_timedep(n0: SpectralField, T: float, p: PhysParams, snapshots=50) -> LinearTrajectory:
    """Exact per-mode heat flow n_t = b(t) P'(rho_bar) Delta n."""
    if not T > 0:
        raise ValueError("T must be positive")
    grid = n0.grid
    times = _snapshot_times(T, snapshots)
    k2 = grid.kmag**2
    c2 = p.sound_speed_sq
    fields = [SpectralField.from_coefficients(grid, n0.coefficients * np.exp(-c2 * k2 * damping_B_integral(t, p)))
              for t in times]
    fields[0] = n0
    return LinearTrajectory(times, fields)


def diffusion_gap(wave_traj: LinearTrajectory, heat_traj: LinearTrajectory, t: float, floor: float = 1e-14) -> float:
    if wave_traj.times.shape != heat_traj.times.shape or not np.allclose(wave_traj.times, heat_traj.times,
                                                                         rtol=0, atol=1e-12):
        raise ValueError("trajectories do not share snapshot times")
    w = wave_traj.at(t)
    h = heat_traj.at(t)
    return (w - h).l2_norm() / max(h.l2_norm(), floor)
