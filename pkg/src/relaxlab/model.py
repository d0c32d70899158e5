"""Physical parameters, gamma-law pressure and the time-dependent damping profile.

The damped Euler system is written for the enthalpy-like unknown

    n = int_{rho_bar}^{rho} P'(s)/s ds

with friction mu/(1+t)^lambda.  ``b(t) = (1+t)^lambda / mu`` is the reciprocal
friction and doubles as the diffusion coefficient of the porous-medium limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

# admissible density window, as multiples of rho_bar
RHO_MIN_FACTOR = 0.25
RHO_MAX_FACTOR = 4.0


class AdmissibilityError(ValueError):
    """A perturbation left the neighbourhood of rho_bar where n <-> rho is valid."""


@dataclass(frozen=True)
class PhysParams:
    lam: float = 0.5
    mu: float = 1.0
    epsilon: float = 1.0
    rho_bar: float = 1.0
    gamma: float = 2.0
    A: float = 0.5
    dim: int = 1

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not self.rho_bar > 0:
            raise ValueError(f"rho_bar must be positive, got {self.rho_bar}")
        if not self.gamma >= 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if not self.A > 0:
            raise ValueError(f"A must be positive, got {self.A}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.lam > 2:
            raise ValueError(f"lambda must be <= 2, got {self.lam}")

    @property
    def sound_speed_sq(self) -> float:
        """P'(rho_bar)."""
        return pressure_prime(self.rho_bar, self)

    def replace(self, **changes) -> "PhysParams":
        d = asdict(self)
        d.update(changes)
        return PhysParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def pressure(rho, p: PhysParams):
    return p.A * np.power(rho, p.gamma)


def pressure_prime(rho, p: PhysParams):
    return p.A * p.gamma * np.power(rho, p.gamma - 1.0)


# ---------------------------------------------------------------------------
# damping profile


def damping_b(t, p: PhysParams):
    """b(t) = (1+t)^lambda / mu."""
    out = np.power(1.0 + np.asarray(t, dtype=float), p.lam) / p.mu
    return float(out) if out.ndim == 0 else out


def damping_b_prime(t, p: PhysParams):
    out = p.lam * np.power(1.0 + np.asarray(t, dtype=float), p.lam - 1.0) / p.mu
    return float(out) if out.ndim == 0 else out


def damping_B_integral(t, p: PhysParams):
    """int_0^t b(s) ds in closed form."""
    t = np.asarray(t, dtype=float)
    if p.lam == -1.0:
        out = np.log1p(t) / p.mu
    else:
        e = p.lam + 1.0
        out = np.expm1(e * np.log1p(t)) / (p.mu * e)
    return float(out) if out.ndim == 0 else out


def damping_invb_integral(t, p: PhysParams):
    """int_0^t 1/b(s) ds in closed form."""
    t = np.asarray(t, dtype=float)
    if p.lam == 1.0:
        out = p.mu * np.log1p(t)
    else:
        e = 1.0 - p.lam
        out = p.mu * np.expm1(e * np.log1p(t)) / e
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DampingProfile:
    """Bundles b, its derivative and both antiderivatives for one parameter set."""

    params: PhysParams

    def b(self, t):
        return damping_b(t, self.params)

    def b_prime(self, t):
        return damping_b_prime(t, self.params)

    def B(self, t):
        return damping_B_integral(t, self.params)

    def Binv(self, t):
        return damping_invb_integral(t, self.params)


# ---------------------------------------------------------------------------
# change of variables


def n_of_rho(rho, p: PhysParams):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise AdmissibilityError("density must be positive")
    if p.gamma == 1.0:
        out = p.A * np.log(rho / p.rho_bar)
    else:
        g1 = p.gamma - 1.0
        out = p.A * p.gamma / g1 * (rho**g1 - p.rho_bar**g1)
    return float(out) if out.ndim == 0 else out


def rho_of_n(n, p: PhysParams):
    n = np.asarray(n, dtype=float)
    if p.gamma == 1.0:
        rho = p.rho_bar * np.exp(n / p.A)
    else:
        g1 = p.gamma - 1.0
        base = p.rho_bar**g1 + n * g1 / (p.A * p.gamma)
        if np.any(~(base > 0)):
            raise AdmissibilityError("n is outside the image of n_of_rho (rho would be <= 0)")
        rho = base ** (1.0 / g1)
    return float(rho) if rho.ndim == 0 else rho


def G_of_n(n, p: PhysParams):
    """P'(rho(n)) - P'(rho_bar); vanishes identically for the isothermal law."""
    if p.gamma == 1.0:
        return np.zeros_like(np.asarray(n, dtype=float)) if np.ndim(n) else 0.0
    rho = rho_of_n(n, p)
    if p.gamma == 2.0:
        # P'(rho) = 2 A rho and n = 2 A (rho - rho_bar): G is the identity, kept exact
        # so the n-equation stays in conservation form
        return np.array(n, dtype=float) if np.ndim(n) else float(n)
    return pressure_prime(rho, p) - pressure_prime(p.rho_bar, p)


def admissible_n_range(p: PhysParams) -> tuple[float, float]:
    return (n_of_rho(RHO_MIN_FACTOR * p.rho_bar, p), n_of_rho(RHO_MAX_FACTOR * p.rho_bar, p))


# ---------------------------------------------------------------------------
# regime classification


class Regime(str, Enum):
    OVERDAMPED = "overdamped"
    CONSTANT = "constant"
    UNDERDAMPED = "underdamped"
    CRITICAL_STABLE = "critical-stable"
    CRITICAL_VIOLATED = "critical-violated"
    SUPERCRITICAL = "supercritical"


_GUARANTEED = {Regime.OVERDAMPED, Regime.CONSTANT, Regime.UNDERDAMPED, Regime.CRITICAL_STABLE}


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    guaranteed: bool
    note: str

    def to_dict(self) -> dict:
        return {"regime": self.regime.value, "guaranteed": self.guaranteed, "note": self.note}


def validate_params(p: PhysParams) -> RegimeReport:
    # PhysParams already rejects mu <= 0 and epsilon outside (0, 1]
    if not p.mu > 0 or not 0 < p.epsilon <= 1:
        raise ValueError("mu must be positive and epsilon must lie in (0, 1]")
    lam = p.lam
    if lam < 0:
        regime = Regime.OVERDAMPED
    elif lam == 0:
        regime = Regime.CONSTANT
    elif lam < 1:
        regime = Regime.UNDERDAMPED
    elif lam == 1:
        regime = Regime.CRITICAL_STABLE if p.mu > 2 * p.epsilon**2 else Regime.CRITICAL_VIOLATED
    else:
        regime = Regime.SUPERCRITICAL
    guaranteed = regime in _GUARANTEED
    if guaranteed:
        note = "small-data global existence guaranteed"
    elif regime is Regime.CRITICAL_VIOLATED:
        note = f"no global-existence guarantee: mu={p.mu} <= 2 eps^2={2 * p.epsilon**2:g}"
    else:
        note = "no global-existence guarantee: friction integrable in time"
    return RegimeReport(regime, guaranteed, note)


def high_frequency_margin(t, p: PhysParams):
    """eps^-2 - 2 b'(t); its large-time limit must be positive for high-frequency decay."""
    return 1.0 / p.epsilon**2 - 2.0 * damping_b_prime(t, p)


def safe_log2_floor(x: float) -> int:
    """floor(log2 x), exact at powers of two."""
    _, e = math.frexp(x)
    # x = m * 2**e with m in [0.5, 1)
    return e - 1
