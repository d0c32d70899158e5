"""Flat JSON scenario configuration.

Every key is optional except ``scenario``; unknown keys are rejected so a
typo such as ``"lamda"`` fails loudly instead of silently falling back to
a default.  ``lambda``, ``mu`` and ``epsilon`` accept a number or a list.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import PhysParams
from .solvers import MAX_AMPLITUDE, DtPolicy, parse_kind
from .spectral import Grid

SCENARIOS = ("spectral-selftest", "linear-oracle", "diffusion-phenomenon", "relaxation-sweep", "stability-probe",
             "besov-report")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key or line."""


def _as_list(v):
    return [float(x) for x in v] if isinstance(v, (list, tuple)) else [float(v)]


@dataclass
class ScenarioConfig:
    scenario: str
    # physics; lists describe sweeps or lattices
    lam: float | list = 0.5
    mu: float | list = 1.0
    epsilon: float | list = 0.5
    rho_bar: float = 1.0
    gamma: float = 2.0
    A: float = 0.5
    dim: int = 1
    # grid
    n_points: int = 256
    length: float = 16 * 3.141592653589793
    # initial data
    data_kind: str = "ill-prepared-O1"
    amplitude: float = 0.1
    q: float | None = None
    data_file: str | None = None
    # integration
    T: float = 2.0
    cfl: float = 0.4
    steps_per_T: int = 2000
    dt_fixed: float | None = None
    layer_fraction: float | None = 0.1
    rtol: float = 1e-10
    atol: float = 1e-12
    k0: int = 2
    # scenario knobs
    t_check: float = 50.0
    cutoff: float = 0.5
    gap_max: float = 0.05
    gap_min_control: float = 0.5
    slope_band: list | None = None
    ratio_cap: float = 10.0
    spread_cap: float = 3.0
    hf_growth_min: float = 10.0
    regularities: list = field(default_factory=lambda: [-0.5, 0.5, 1.5])
    # outputs
    output_dir: str = "results"
    formats: list = field(default_factory=lambda: list(FORMATS))
    record_timing: bool = False
    workers: int = 1
    seed: int = 0

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        data = {}
        for key, val in raw.items():
            attr = "lam" if key == "lambda" else key
            if attr not in names or key == "lam":
                raise ConfigError(f"unknown key {key!r}")
            data[attr] = val
        if "scenario" not in data:
            raise ConfigError("missing required key 'scenario'")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        try:
            cfg.validate()
        except TypeError as exc:
            raise ConfigError(f"wrong value type: {exc}") from None
        return cfg

    @classmethod
    def from_json(cls, text: str, source: str = "<config>", scenario: str | None = None,
                  overrides: dict | None = None) -> "ScenarioConfig":
        """Parse JSON text; ``scenario`` fills a missing key, ``overrides`` win over file values."""
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if isinstance(raw, dict):
            if scenario is not None:
                found = raw.setdefault("scenario", scenario)
                if found != scenario:
                    raise ConfigError(f"{source}: scenario {found!r} does not match {scenario!r}")
            raw.update(overrides or {})
        try:
            return cls.from_dict(raw)
        except ConfigError as exc:
            key = _key_in_message(str(exc))
            line = _line_of_key(text, key) if key else None
            where = f"{source}:{line}" if line else source
            raise ConfigError(f"{where}: {exc}") from None

    @classmethod
    def load(cls, path, scenario: str | None = None, overrides: dict | None = None) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        return cls.from_json(text, str(path), scenario, overrides)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            out["lambda" if f.name == "lam" else f.name] = getattr(self, f.name)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        """Hash of the experiment itself; where results go and how many workers run it are left out."""
        d = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "workers")}
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    # -- validation ----------------------------------------------------------

    def _check(self, ok: bool, key: str, msg: str):
        if not ok:
            raise ConfigError(f"key {key!r}: {msg}")

    def validate(self) -> None:
        self._check(self.scenario in SCENARIOS, "scenario", f"must be one of {SCENARIOS}")
        for key in ("lam", "mu", "epsilon"):
            v = getattr(self, key)
            name = "lambda" if key == "lam" else key
            ok = isinstance(v, (int, float)) and not isinstance(v, bool) or (
                isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v))
            self._check(ok, name, "must be a number or a non-empty list of numbers")
        for eps in self.epsilons:
            self._check(0 < eps <= 1, "epsilon", "values must lie in (0, 1]")
        for mu in self.mus:
            self._check(mu > 0, "mu", "values must be positive")
        for lam in self.lambdas:
            self._check(lam <= 2, "lambda", "values must be <= 2")
        self._check(self.dim in (1, 2), "dim", "must be 1 or 2")
        self._check(isinstance(self.n_points, int) and self.n_points >= 8 and not self.n_points & (self.n_points - 1),
                    "n_points", "must be a power of two >= 8")
        self._check(self.length > 0, "length", "must be positive")
        self._check(self.rho_bar > 0 and self.gamma >= 1 and self.A > 0, "gamma",
                    "need rho_bar > 0, gamma >= 1, A > 0")
        try:
            parse_kind(self.data_kind, self.q)
        except ValueError as exc:
            raise ConfigError(f"key 'data_kind': {exc}") from None
        self._check(0 < self.amplitude <= MAX_AMPLITUDE, "amplitude", f"must lie in (0, {MAX_AMPLITUDE}]")
        self._check(self.T > 0, "T", "must be positive")
        self._check(self.cfl > 0, "cfl", "must be positive")
        self._check(isinstance(self.steps_per_T, int) and self.steps_per_T >= 1, "steps_per_T",
                    "must be a positive integer")
        self._check(self.dt_fixed is None or self.dt_fixed > 0, "dt_fixed", "must be positive or null")
        self._check(self.layer_fraction is None or self.layer_fraction > 0, "layer_fraction",
                    "must be positive or null")
        self._check(self.rtol > 0 and self.atol > 0, "rtol", "tolerances must be positive")
        self._check(isinstance(self.k0, int) and self.k0 >= 0, "k0", "must be a nonnegative integer")
        self._check(isinstance(self.workers, int) and self.workers >= 1, "workers", "must be a positive integer")
        self._check(isinstance(self.seed, int), "seed", "must be an integer")
        self._check(isinstance(self.formats, list) and set(self.formats) <= set(FORMATS) and self.formats,
                    "formats", f"must be a non-empty subset of {FORMATS}")
        self._check(self.slope_band is None or (isinstance(self.slope_band, list) and len(self.slope_band) == 2
                                                and self.slope_band[0] < self.slope_band[1]),
                    "slope_band", "must be null or [low, high] with low < high")
        self._check(isinstance(self.regularities, list) and len(self.regularities) > 0, "regularities",
                    "must be a non-empty list")
        # scenario-specific requirements
        if self.scenario == "relaxation-sweep":
            self._check(len(self.epsilons) >= 3, "epsilon", "a sweep needs at least three values")
            self._check(len(self.lambdas) == 1 and len(self.mus) == 1, "lambda",
                        "relaxation-sweep takes a single lambda and mu")
        if self.scenario == "besov-report" and self.data_file is not None:
            self._check(Path(self.data_file).suffix in (".txt", ".npy"), "data_file", "must be .txt or .npy")
        if self.scenario == "diffusion-phenomenon":
            self._check(self.t_check > 0 and self.cutoff > 0, "t_check", "t_check and cutoff must be positive")

    # -- derived objects --------------------------------------------------------

    @property
    def lambdas(self) -> list:
        return _as_list(self.lam)

    @property
    def mus(self) -> list:
        return _as_list(self.mu)

    @property
    def epsilons(self) -> list:
        return sorted(_as_list(self.epsilon))

    def params(self, lam=None, mu=None, epsilon=None) -> PhysParams:
        return PhysParams(lam=self.lambdas[0] if lam is None else lam, mu=self.mus[0] if mu is None else mu,
                          epsilon=self.epsilons[0] if epsilon is None else epsilon, rho_bar=self.rho_bar,
                          gamma=self.gamma, A=self.A, dim=self.dim)

    def grid(self) -> Grid:
        return Grid(self.dim, self.n_points, self.length)

    def dt_policy(self) -> DtPolicy:
        return DtPolicy(cfl=self.cfl, steps_per_T=self.steps_per_T, fixed=self.dt_fixed,
                        layer_fraction=self.layer_fraction)


def _key_in_message(msg: str) -> str | None:
    m = re.search(r"key '([^']+)'", msg)
    return m.group(1) if m else None


def _line_of_key(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None
