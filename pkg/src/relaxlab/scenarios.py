"""Scenario dispatch: each scenario runs module operations, writes artifacts atomically and returns checks."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .experiments import (Check, diffusion_gap_at, linear_oracle_error, order_study, relaxation_pair,
                          spectral_selftest, stability_probe, summarize_sweep)
from .model import n_of_rho, validate_params
from .solvers import BlowUpDetected, build_initial_data, parse_kind
from .spectral import DyadicLadder, SpectralField, besov_norm_banded, block_norms, threshold_J
from .storage import atomic_write_json, atomic_write_text

log = logging.getLogger("relaxlab")

SWEEP_COLUMNS = ("epsilon", "sup_err", "l1_high_err", "l1_vel_err", "total", "wall_seconds")
MASS_TOL = 1e-10

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class ScenarioResult:
    scenario: str
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    runtime_alarm: str | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.runtime_alarm is not None:
            return EXIT_RUNTIME
        return EXIT_PASS if self.passed else EXIT_FAIL

    def manifest(self, cfg: ScenarioConfig) -> dict:
        return {
            "scenario": self.scenario,
            "version": __version__,
            "config": cfg.to_dict(),
            "config_hash": cfg.digest(),
            "checks": [c.to_dict() for c in self.checks],
            "n_pass": sum(c.passed for c in self.checks),
            "n_fail": sum(not c.passed for c in self.checks),
            "status": "pass" if self.exit_code == EXIT_PASS else ("runtime-alarm" if self.runtime_alarm else "fail"),
            "runtime_alarm": self.runtime_alarm,
            "results": self.results,
        }


def _fmt(v) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def write_csv(path, columns, rows) -> Path:
    lines = [",".join(columns)] + [",".join(_fmt(r[c]) for c in columns) for r in rows]
    return atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# scenarios


def run_spectral_selftest(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    res = ScenarioResult(cfg.scenario)
    res.checks = spectral_selftest(cfg.grid(), seed=cfg.seed)
    res.results["ladder"] = {"j_min": int(DyadicLadder.for_grid(cfg.grid()).j_min),
                             "j_max": int(DyadicLadder.for_grid(cfg.grid()).j_max)}
    return res


def run_linear_oracle(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    res = ScenarioResult(cfg.scenario)
    grid = cfg.grid()
    table = []
    for lam in cfg.lambdas:
        for eps in cfg.epsilons:
            p = cfg.params(lam=lam, epsilon=eps, mu=cfg.mus[0])
            err = linear_oracle_error(p, grid, T=cfg.T, amplitude=cfg.amplitude)
            table.append({"lambda": lam, "epsilon": eps, "max_rel_error": err})
            res.checks.append(Check(f"linear-oracle(lambda={lam:g},eps={eps:g})", err <= 1e-10, err, 1e-10))
    p = cfg.params()
    e, pm = order_study(p, grid, T=cfg.T, amplitude=min(2 * cfg.amplitude, 0.5))
    for study in (e, pm):
        res.checks.append(Check(f"order-{study.solver}", study.min_order >= 1.8, study.min_order, 1.8))
    res.results = {"oracle": table, "order": [e.to_dict(), pm.to_dict()]}
    return res


def run_diffusion_phenomenon(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    res = ScenarioResult(cfg.scenario)
    grid = cfg.grid()
    rows = []
    for lam in cfg.lambdas:
        p = cfg.params(lam=lam, epsilon=1.0)
        gap = diffusion_gap_at(p, grid, cfg.t_check, cfg.cutoff)
        rows.append({"lambda": lam, "gap": gap})
        if lam < 1:
            res.checks.append(Check(f"heat-like(lambda={lam:g})", gap <= cfg.gap_max, gap, cfg.gap_max))
        elif lam > 1:
            res.checks.append(Check(f"wave-like(lambda={lam:g})", gap >= cfg.gap_min_control, gap,
                                    cfg.gap_min_control))
    res.results = {"t_check": cfg.t_check, "gaps": rows}
    return res


def _sweep_member(args):
    cfg_dict, eps = args
    cfg = ScenarioConfig.from_dict(cfg_dict)
    p = cfg.params(epsilon=eps)
    start = time.perf_counter()
    try:
        r = relaxation_pair(cfg.data_kind, p, cfg.grid(), cfg.amplitude, cfg.T, q=cfg.q, policy=cfg.dt_policy(),
                            k0=cfg.k0)
    except BlowUpDetected as exc:
        return {"epsilon": eps, "blowup": {"t": exc.t, "trigger": exc.trigger}}
    wall = time.perf_counter() - start if cfg.record_timing else float("nan")
    return {"epsilon": eps, "blowup": None, "result": r, "wall_seconds": wall}


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_relaxation_sweep(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    res = ScenarioResult(cfg.scenario)
    p0 = cfg.params()
    guaranteed = validate_params(p0).guaranteed
    members = _map(_sweep_member, [(cfg.to_dict(), eps) for eps in cfg.epsilons], cfg.workers)
    members.sort(key=lambda m: m["epsilon"])
    member_dir = out / "members"
    for m in members:
        body = {"epsilon": m["epsilon"], "blowup": m["blowup"]}
        if m["blowup"] is None:
            r = m["result"]
            body.update(r.row(), wall_seconds=m["wall_seconds"], max_ratio=r.max_ratio,
                        damped_mode_scaled=r.damped_mode_scaled, mass_drift=r.mass_drift,
                        energy=r.energy.to_dict())
        atomic_write_json(member_dir / f"eps_{m['epsilon']:.6g}.json", body)
    blown = [m for m in members if m["blowup"] is not None]
    if blown:
        res.results["blowups"] = [{"epsilon": m["epsilon"], **m["blowup"]} for m in blown]
        if guaranteed:
            res.runtime_alarm = f"blow-up in guaranteed regime at eps={blown[0]['epsilon']:g}"
        res.checks.append(Check("all-members-complete", False, len(blown), 0))
        return res
    summary = summarize_sweep([m["result"] for m in members])
    rows = [dict(m["result"].row(), wall_seconds=m["wall_seconds"]) for m in members]
    if "csv" in cfg.formats:
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    kind, q = parse_kind(cfg.data_kind, cfg.q)
    if cfg.slope_band is not None:
        lo, hi = cfg.slope_band
    else:
        rate = min(1.0, q) if kind == "gap-controlled" else 1.0
        lo, hi = rate - 0.2, rate + 0.2
    res.checks.append(Check("slope-in-band", lo <= summary.slope <= hi, summary.slope, hi, f"band [{lo:g}, {hi:g}]"))
    res.checks.append(Check("damped-mode-spread", summary.damped_spread <= cfg.spread_cap, summary.damped_spread,
                            cfg.spread_cap))
    res.checks.append(Check("energy-ratio-cap", summary.max_ratio <= cfg.ratio_cap, summary.max_ratio,
                            cfg.ratio_cap))
    res.checks.append(Check("energy-ratio-spread", summary.ratio_spread <= cfg.spread_cap, summary.ratio_spread,
                            cfg.spread_cap))
    drift = max(r.mass_drift for r in summary.results)
    res.checks.append(Check("mass-conservation", drift <= MASS_TOL, drift, MASS_TOL))
    res.results = {"sweep": summary.to_dict(), "wall_seconds": [r["wall_seconds"] for r in rows],
                   "regime": validate_params(p0).to_dict()}
    return res


def _probe_member(args):
    cfg_dict, lam, mu = args
    cfg = ScenarioConfig.from_dict(cfg_dict)
    p = cfg.params(lam=lam, mu=mu)
    return stability_probe(p, cfg.grid(), cfg.amplitude, cfg.T, cfg.dt_policy(), cfg.k0, cfg.data_kind)


def run_stability_probe(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    res = ScenarioResult(cfg.scenario)
    lattice = [(cfg.to_dict(), lam, mu) for lam in cfg.lambdas for mu in cfg.mus]
    outcomes = _map(_probe_member, lattice, cfg.workers)
    for o in outcomes:
        tag = f"lambda={o.lam:g},mu={o.mu:g}"
        if o.guaranteed:
            if not o.completed:
                res.runtime_alarm = res.runtime_alarm or f"blow-up in guaranteed regime ({tag}): {o.trigger}"
            res.checks.append(Check(f"bounded({tag})", o.completed and o.max_ratio <= cfg.ratio_cap, o.max_ratio,
                                    cfg.ratio_cap))
        elif o.regime == "supercritical":
            fired = not o.completed or o.hf_growth >= cfg.hf_growth_min
            res.checks.append(Check(f"instability({tag})", fired, o.hf_growth, cfg.hf_growth_min,
                                    f"trigger={o.trigger}"))
        res.checks.append(Check(f"mass({tag})", o.mass_drift <= MASS_TOL, o.mass_drift, MASS_TOL))
    res.results = {"probes": [o.to_dict() for o in outcomes]}
    return res


def _load_field(cfg: ScenarioConfig, grid) -> dict:
    if cfg.data_file is not None:
        path = Path(cfg.data_file)
        arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        arr = np.asarray(arr, dtype=float).reshape(grid.shape)
        return {"data": SpectralField(grid, values=arr)}
    p = cfg.params()
    e, pm = build_initial_data(cfg.data_kind, p, grid, cfg.amplitude, q=cfg.q, k0=cfg.k0)
    return {"n0": e.n, "u0": e.u, "rho_star0": pm.rho_star - pm.rho_star.mean(),
            "n_star0": SpectralField(grid, values=n_of_rho(pm.rho_star.values, p))}


def run_besov_report(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    res = ScenarioResult(cfg.scenario)
    grid = cfg.grid()
    ladder = DyadicLadder.for_grid(grid, cfg.k0)
    J0 = threshold_J(0.0, cfg.params(), cfg.k0)
    tables = {}
    block_rows = []
    for name, u in _load_field(cfg, grid).items():
        u = u.without_mean() if isinstance(u, SpectralField) else [c.without_mean() for c in u]
        bn = block_norms(u, ladder)
        entry = {}
        for s in cfg.regularities:
            entry[f"s={s:g}"] = {band: besov_norm_banded(u, s, J0, band, ladder) for band in ("low", "high", "all")}
        tables[name] = entry
        for j, v in zip(ladder.indices, bn):
            block_rows.append({"field": name, "j": int(j), "block_norm": float(v)})
    if "csv" in cfg.formats:
        lines = ["field,j,block_norm"] + [f"{r['field']},{r['j']},{r['block_norm']!r}" for r in block_rows]
        atomic_write_text(out / "blocks.csv", "\n".join(lines) + "\n")
    finite = all(math.isfinite(v) for t in tables.values() for e in t.values() for v in e.values())
    res.checks.append(Check("norms-finite", finite, float(finite), 1.0))
    res.results = {"J0": J0, "norms": tables}
    return res


RUNNERS = {
    "spectral-selftest": run_spectral_selftest,
    "linear-oracle": run_linear_oracle,
    "diffusion-phenomenon": run_diffusion_phenomenon,
    "relaxation-sweep": run_relaxation_sweep,
    "stability-probe": run_stability_probe,
    "besov-report": run_besov_report,
}


def run_scenario(cfg: ScenarioConfig, out_root=None) -> ScenarioResult:
    """Run one scenario and write ``<out>/<scenario>/manifest.json`` (plus CSV tables)."""
    out = Path(out_root or cfg.output_dir) / cfg.scenario
    log.info("running %s into %s", cfg.scenario, out)
    try:
        res = RUNNERS[cfg.scenario](cfg, out)
    except BlowUpDetected as exc:
        res = ScenarioResult(cfg.scenario, runtime_alarm=str(exc))
    if "json" in cfg.formats:
        atomic_write_json(out / "results.json", res.results)
    atomic_write_json(out / "manifest.json", res.manifest(cfg))
    for c in res.checks:
        log.info("%s %s value=%.6g threshold=%.6g", "PASS" if c.passed else "FAIL", c.name, c.value, c.threshold)
    return res


# ---------------------------------------------------------------------------
# summary


class SummaryError(RuntimeError):
    pass


def summarize(results_dir) -> dict:
    """Aggregate every ``*/manifest.json`` under a results directory into ``summary.json``."""
    root = Path(results_dir)
    paths = sorted(root.glob("*/manifest.json"))
    if not paths:
        raise SummaryError(f"no scenario manifests under {root}")
    scenarios = []
    n_pass = n_fail = 0
    slopes, regimes = {}, []
    for path in paths:
        m = json.loads(path.read_text())
        ok = m["status"] == "pass"
        n_pass += ok
        n_fail += not ok
        scenarios.append({"scenario": m["scenario"], "status": m["status"], "config_hash": m["config_hash"],
                          "n_pass": m["n_pass"], "n_fail": m["n_fail"]})
        if m["scenario"] == "relaxation-sweep" and "sweep" in m["results"]:
            slopes[m["config_hash"]] = m["results"]["sweep"]["slope"]
        if m["scenario"] == "stability-probe":
            regimes.extend({k: p[k] for k in ("lam", "mu", "epsilon", "regime", "guaranteed", "completed",
                                              "max_ratio")} for p in m["results"]["probes"])
    summary = {"pass": n_pass, "fail": n_fail, "scenarios": scenarios, "slopes": slopes, "regimes": regimes}
    atomic_write_json(root / "summary.json", summary)
    return summary
