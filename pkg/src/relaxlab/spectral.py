"""Periodic grids, Fourier fields and the Littlewood-Paley machinery.

Homogeneous dyadic blocks use the radial profile

    chi(r) = g(4/3 - r) / (g(4/3 - r) + g(r - 3/4)),   g(x) = exp(-1/x) for x > 0,
    phi(r) = chi(r/2) - chi(r),

so that supp phi is the annulus 3/4 <= r <= 8/3 and the blocks telescope to one
on every resolved nonzero frequency.  The mean mode never enters a block.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft as sp_fft

from .model import PhysParams, damping_b, safe_log2_floor

log = logging.getLogger(__name__)

CHI_LOW = 0.75
CHI_HIGH = 4.0 / 3.0


@dataclass(frozen=True)
class Grid:
    dim: int = 1
    n_points: int = 256
    length: float = 16 * np.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only d = 1 and d = 2 are supported")
        if self.n_points < 4 or self.n_points & (self.n_points - 1):
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.dim

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> tuple[np.ndarray, ...]:
        """Node coordinates on [-L/2, L/2), one array per axis, broadcast to the grid shape."""
        x1 = -self.length / 2 + self.dx * np.arange(self.n_points)
        return tuple(np.meshgrid(*([x1] * self.dim), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavevectors, shape (dim, *shape)."""
        k1 = 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)
        return np.stack(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(np.sum(self.wavenumbers**2, axis=0))

    @cached_property
    def radial_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct |xi| values and the index map back onto the grid."""
        uniq, inv = np.unique(self.kmag, return_inverse=True)
        return uniq, inv.reshape(self.shape)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask on the integer mode indices."""
        idx = np.abs(np.fft.fftfreq(self.n_points) * self.n_points)
        keep1 = idx < self.n_points / 3.0
        masks = np.meshgrid(*([keep1] * self.dim), indexing="ij")
        return np.logical_and.reduce(masks)

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        """Mask dropping the unpaired Nyquist index, whose derivative is not real."""
        idx = np.abs(np.fft.fftfreq(self.n_points) * self.n_points)
        keep1 = idx < self.n_points / 2
        masks = np.meshgrid(*([keep1] * self.dim), indexing="ij")
        return np.logical_and.reduce(masks)

    @property
    def k_min(self) -> float:
        return 2 * np.pi / self.length

    @property
    def k_max(self) -> float:
        """Largest resolved |xi| (the grid corner)."""
        return np.sqrt(self.dim) * np.pi * self.n_points / self.length

    @property
    def parseval_scale(self) -> float:
        """sqrt(L^d) / N^d: turns unnormalised FFT coefficients into L2 norms."""
        return math.sqrt(self.length**self.dim) / self.n_points**self.dim

    def fft(self, values: np.ndarray) -> np.ndarray:
        return sp_fft.fftn(values, axes=self._axes(values))

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return sp_fft.ifftn(coeffs, axes=self._axes(coeffs)).real

    def _axes(self, arr) -> tuple[int, ...]:
        return tuple(range(arr.ndim - self.dim, arr.ndim))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n_points": self.n_points, "length": self.length}


class SpectralField:
    """Real grid function with lazily synchronised Fourier coefficients."""

    __slots__ = ("grid", "_values", "_coeffs")

    def __init__(self, grid: Grid, values=None, coefficients=None):
        if (values is None) == (coefficients is None):
            raise ValueError("give exactly one of values / coefficients")
        self.grid = grid
        self._values = None if values is None else np.asarray(values, dtype=float)
        self._coeffs = None if coefficients is None else np.asarray(coefficients, dtype=complex)
        arr = self._values if self._values is not None else self._coeffs
        if arr.shape != grid.shape:
            raise ValueError(f"array shape {arr.shape} does not match grid {grid.shape}")

    @classmethod
    def from_coefficients(cls, grid: Grid, coeffs) -> "SpectralField":
        return cls(grid, coefficients=coeffs)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, values=np.zeros(grid.shape))

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = self.grid.ifft(self._coeffs)
        return self._values

    @property
    def coefficients(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = self.grid.fft(self._values)
        return self._coeffs

    def mean(self) -> float:
        return float(self.coefficients.flat[0].real) / self.grid.n_points**self.grid.dim

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coefficients) ** 2))) * self.grid.parseval_scale

    def gradient(self) -> list["SpectralField"]:
        c = self.coefficients
        return [SpectralField.from_coefficients(self.grid, 1j * k * c) for k in self.grid.wavenumbers]

    def without_mean(self) -> "SpectralField":
        c = self.coefficients.copy()
        c.flat[0] = 0.0
        return SpectralField.from_coefficients(self.grid, c)

    def __add__(self, other):
        if isinstance(other, SpectralField):
            return SpectralField(self.grid, values=self.values + other.values)
        return SpectralField(self.grid, values=self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            return SpectralField(self.grid, values=self.values - other.values)
        return SpectralField(self.grid, values=self.values - other)

    def __mul__(self, scalar):
        return SpectralField(self.grid, values=self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, values=-self.values)

    def __repr__(self):
        return f"SpectralField(grid={self.grid}, l2={self.l2_norm():.3e})"


def l2_norm_vector(fields) -> float:
    return float(np.sqrt(sum(f.l2_norm() ** 2 for f in fields)))


# ---------------------------------------------------------------------------
# radial profiles


def _glue(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def chi(r):
    """Smooth radial cut-off: 1 on [0, 3/4], 0 on [4/3, inf)."""
    r = np.asarray(r, dtype=float)
    a = _glue(CHI_HIGH - r)
    b = _glue(r - CHI_LOW)
    return a / (a + b)


def phi(r):
    """Annular profile chi(r/2) - chi(r), supported in [3/4, 8/3]."""
    return chi(np.asarray(r, dtype=float) / 2.0) - chi(r)


@dataclass
class DyadicLadder:
    """Block indices representable on a grid plus the generic threshold shift k0."""

    j_min: int
    j_max: int
    k0: int = 2
    _weights: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def for_grid(cls, grid: Grid, k0: int = 2) -> "DyadicLadder":
        # block j is non-empty iff 3/4 * 2^j <= k_max and 8/3 * 2^j >= k_min
        j_min = math.ceil(math.log2(3.0 * grid.k_min / 8.0))
        j_max = math.floor(math.log2(4.0 * grid.k_max / 3.0))
        return cls(j_min=j_min, j_max=j_max, k0=k0)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    def __len__(self):
        return self.j_max - self.j_min + 1

    def check(self, j: int):
        if not self.j_min <= j <= self.j_max:
            raise ValueError(f"block {j} outside representable range [{self.j_min}, {self.j_max}]")

    def multipliers(self, grid: Grid) -> np.ndarray:
        """phi(2^-j |xi|) for every block, shape (n_blocks, *grid.shape)."""
        key = (grid.dim, grid.n_points, grid.length)
        if key not in self._weights:
            scales = 2.0 ** (-self.indices.astype(float))
            w = phi(scales.reshape((-1,) + (1,) * grid.dim) * grid.kmag[None])
            self._weights[key] = w
        return self._weights[key]


def dyadic_block(u: SpectralField, j: int, ladder: DyadicLadder | None = None) -> SpectralField:
    ladder = ladder or DyadicLadder.for_grid(u.grid)
    ladder.check(j)
    w = ladder.multipliers(u.grid)[j - ladder.j_min]
    return SpectralField.from_coefficients(u.grid, w * u.coefficients)


def low_pass(u: SpectralField, J: int) -> SpectralField:
    """S_J u: keeps the mean and all blocks j <= J - 1 (multiplier chi(2^-J |xi|))."""
    w = chi(2.0 ** (-J) * u.grid.kmag)
    return SpectralField.from_coefficients(u.grid, w * u.coefficients)


def block_norms_from_coeffs(coeffs: np.ndarray, grid: Grid, ladder: DyadicLadder) -> np.ndarray:
    """L2 norms of every block; a leading component axis is summed in quadrature."""
    power = np.abs(coeffs) ** 2
    if power.ndim > grid.dim:
        power = power.reshape((-1,) + grid.shape).sum(axis=0)
    w = ladder.multipliers(grid)
    sums = np.tensordot(w**2, power, axes=grid.dim)
    return np.sqrt(sums) * grid.parseval_scale


def block_norms(u, ladder: DyadicLadder | None = None) -> np.ndarray:
    """Block norms of a SpectralField or a sequence of them (vector field)."""
    fields = [u] if isinstance(u, SpectralField) else list(u)
    grid = fields[0].grid
    ladder = ladder or DyadicLadder.for_grid(grid)
    coeffs = np.stack([f.coefficients for f in fields])
    return block_norms_from_coeffs(coeffs, grid, ladder)


def _warn_if_mean(u, tol=1e-10):
    fields = [u] if isinstance(u, SpectralField) else list(u)
    for f in fields:
        m = f.mean()
        scale = max(np.max(np.abs(f.values)), 1e-300)
        if abs(m) > tol * scale:
            warnings.warn(f"field has nonzero mean {m:.3e}; mean mode excluded from Besov norm", stacklevel=3)


def besov_norm(u, s: float, ladder: DyadicLadder | None = None) -> float:
    """Homogeneous B^s_{2,1} norm: sum_j 2^{js} ||Delta_j u||_{L2}."""
    _warn_if_mean(u)
    bn = block_norms(u, ladder)
    ladder = ladder or DyadicLadder.for_grid((u if isinstance(u, SpectralField) else u[0]).grid)
    return float(np.sum(2.0 ** (s * ladder.indices) * bn))


def besov_norm_banded(u, s: float, J: int, band: str, ladder: DyadicLadder | None = None) -> float:
    """Low (j <= J) or high (j >= J + 1) part of the B^s_{2,1} norm."""
    grid = (u if isinstance(u, SpectralField) else u[0]).grid
    ladder = ladder or DyadicLadder.for_grid(grid)
    bn = block_norms(u, ladder)
    w = 2.0 ** (s * ladder.indices) * bn
    if band == "low":
        return float(np.sum(w[ladder.indices <= J]))
    if band == "high":
        return float(np.sum(w[ladder.indices >= J + 1]))
    if band == "all":
        return float(np.sum(w))
    raise ValueError(f"unknown band {band!r}")


# ---------------------------------------------------------------------------
# time-dependent frequency threshold


def threshold_J(t: float, p: PhysParams, k0: int = 2) -> int:
    """J_t = floor(log2(1 / (eps b(t)))) - k0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return safe_log2_floor(1.0 / (p.epsilon * damping_b(t, p))) - k0


def crossover_time_tj(j: int, p: PhysParams, k0: int = 2) -> float:
    """Time at which block j changes band; solves eps b(t_j) 2^{k0+j} = 1 when positive."""
    if p.lam == 0:
        raise ValueError("no crossover for constant damping (lambda = 0)")
    val = (p.mu / (p.epsilon * 2.0 ** (k0 + j))) ** (1.0 / p.lam) - 1.0
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# Chemin-Lerner accumulators


_BANDS = ("low", "high", "all")


class NormAccumulator:
    """Running per-block sup / L1 / L2-in-time trackers split by the moving threshold.

    Every sample ``accumulate(u, t, weight)`` contributes the block values
    ``weight * 2^{js} ||Delta_j u||``.  Time integrals are left-endpoint sums:
    the value recorded at one sample is held until the next.  Block j counts as
    low at time t when j <= J_t and as high otherwise.
    """

    def __init__(self, s: float, params: PhysParams, ladder: DyadicLadder, band: str = "all"):
        if band not in _BANDS:
            raise ValueError(f"band must be one of {_BANDS}")
        self.s = s
        self.params = params
        self.ladder = ladder
        self.band = band
        n = len(ladder)
        self.sup = {"low": np.zeros(n), "high": np.zeros(n)}
        self.l1 = {"low": np.zeros(n), "high": np.zeros(n)}
        self.l2 = {"low": np.zeros(n), "high": np.zeros(n)}
        self.last_time: float | None = None
        self._held: tuple[np.ndarray, np.ndarray] | None = None
        self._dyadic = 2.0 ** (s * ladder.indices)

    def low_mask(self, t: float) -> np.ndarray:
        return self.ladder.indices <= threshold_J(t, self.params, self.ladder.k0)

    def accumulate(self, u, t: float, weight: float = 1.0) -> "NormAccumulator":
        bn = block_norms(u, self.ladder)
        return self.accumulate_block_norms(bn, t, weight)

    def accumulate_block_norms(self, bn: np.ndarray, t: float, weight: float = 1.0) -> "NormAccumulator":
        if self.last_time is not None and not t > self.last_time:
            raise ValueError(f"non-monotone sample time {t} after {self.last_time}")
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        vals = weight * self._dyadic * bn
        low = self.low_mask(t)
        if self._held is not None:
            dt = t - self.last_time
            hv, hlow = self._held
            for band, mask in (("low", hlow), ("high", ~hlow)):
                self.l1[band][mask] += dt * hv[mask]
                self.l2[band][mask] += dt * hv[mask] ** 2
        for band, mask in (("low", low), ("high", ~low)):
            np.maximum(self.sup[band], np.where(mask, vals, 0.0), out=self.sup[band])
        self._held = (vals, low)
        self.last_time = float(t)
        return self

    def finalize(self, rho, band: str | None = None) -> float:
        """Chemin-Lerner semi-norm sum_j 2^{js} ||Delta_j u||_{L^rho(I_j)} for rho in {1, 2, inf}."""
        band = band or self.band
        if band not in _BANDS:
            raise ValueError(f"unknown band {band!r}")
        if rho in (1, 1.0):
            per = self.l1["low"] + self.l1["high"] if band == "all" else self.l1[band]
        elif rho in (2, 2.0):
            per = np.sqrt(self.l2["low"] + self.l2["high"] if band == "all" else self.l2[band])
        elif rho == np.inf or rho == "inf":
            per = np.maximum(self.sup["low"], self.sup["high"]) if band == "all" else self.sup[band]
        else:
            raise ValueError(f"unsupported time exponent {rho!r}")
        return float(np.sum(per))


def accumulate(acc: NormAccumulator, u, t: float, weight: float = 1.0) -> NormAccumulator:
    return acc.accumulate(u, t, weight)
