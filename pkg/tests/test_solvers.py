import json
import math

import numpy as np
import pytest

from relaxlab.diagnostics import damped_mode
from relaxlab.linear import propagate_modes, solve_heat_timedep, split_velocity
from relaxlab.model import AdmissibilityError, PhysParams
from relaxlab.solvers import (BlowUpDetected, DtPolicy, EulerState, MonitorCaps, PMState, blowup_monitor,
                              build_initial_data, darcy_velocity, euler_step, parse_kind, pm_step, run_euler,
                              run_porous_medium)
from relaxlab.spectral import Grid, SpectralField, besov_norm
from relaxlab.storage import atomic_write_text, run_length

G1 = Grid(dim=1, n_points=64, length=16 * np.pi)
G2 = Grid(dim=2, n_points=32, length=8 * np.pi)
P1 = PhysParams(lam=0.5, mu=1.0, epsilon=0.5)


def test_equilibrium_is_a_fixed_point():
    for g in (G1, G2):
        p = P1.replace(dim=g.dim)
        s = EulerState.equilibrium(g)
        out = euler_step(s, 0.05, p)
        assert np.all(out.n.values == 0.0) and np.all(out.u_values() == 0.0)
        traj = run_euler(s, 1.0, p, DtPolicy(steps_per_T=20), 5)
        assert traj.mass_drift == 0.0
        assert all(np.all(st.n.values == 0.0) for st in traj.states)


def test_linear_only_step_is_the_mode_propagator():
    init, _ = build_initial_data("ill-prepared-O1", P1, G1, 0.1)
    out = euler_step(init, 0.3, P1, nonlinear=False)
    m0, _, _ = split_velocity(init.u_coefficients(), G1, P1.epsilon)
    n_ref, m_ref = propagate_modes(init.n.coefficients, m0, G1.kmag, 0.0, 0.3, P1)
    n_ref.flat[0] = init.n.coefficients.flat[0]
    m_got, _, _ = split_velocity(out.u_coefficients(), G1, P1.epsilon)
    keep = G1.nyquist_free
    scale = np.max(np.abs(init.n.coefficients))
    assert np.max(np.abs(out.n.coefficients - n_ref * keep)) <= 1e-12 * scale
    assert np.max(np.abs(m_got - m_ref * keep)) <= 1e-12 * scale


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        euler_step(EulerState.equilibrium(G1), 0.0, P1)
    with pytest.raises(ValueError):
        pm_step(PMState(SpectralField(G1, values=np.ones(G1.shape))), -1.0, P1)


def test_reference_run_decays_on_its_tail():
    p = PhysParams(lam=0.5, mu=1.0, epsilon=0.5)
    init, _ = build_initial_data("well-prepared", p, G1, 0.05)
    init = EulerState(init.n, [SpectralField.zeros(G1)], 0.0)
    traj = run_euler(init, 20.0, p, DtPolicy(steps_per_T=400), 40)
    sup = np.array([np.max(np.abs(s.n.values - s.n.mean())) for s in traj.states])
    tail = sup[len(sup) // 4:]
    assert traj.times[-1] == 20.0
    assert np.all(np.diff(tail) < 0)
    assert traj.mass_drift <= 1e-10


def test_porous_medium_constant_state_is_fixed():
    pm = PMState(SpectralField(G1, values=np.full(G1.shape, P1.rho_bar)))
    traj = run_porous_medium(pm, 1.0, P1, DtPolicy(steps_per_T=10), 2)
    assert np.all(traj.final.rho_star.values == P1.rho_bar)


def _pm_heat_gap(p, amplitude, T=2.0):
    _, pm = build_initial_data("well-prepared", p, G1, amplitude)
    traj = run_porous_medium(pm, T, p, DtPolicy(steps_per_T=200), 1)
    heat = solve_heat_timedep(pm.rho_star - p.rho_bar, T, p, snapshots=1).at(T)
    return ((traj.final.rho_star - p.rho_bar) - heat).l2_norm() / heat.l2_norm()


def test_porous_medium_linear_regime_is_the_heat_flow():
    # isothermal pressure: the remainder vanishes and the flow is exactly the heat flow
    assert _pm_heat_gap(PhysParams(lam=0.5, mu=1.0, gamma=1.0, A=1.0), 1e-6) <= 1e-8
    # gamma = 2: the remainder is quadratic, so the relative gap is first order in the amplitude
    p = PhysParams(lam=0.5, mu=1.0)
    g5, g6 = _pm_heat_gap(p, 1e-5), _pm_heat_gap(p, 1e-6)
    assert g5 / g6 == pytest.approx(10.0, rel=0.01)
    assert g6 <= 0.1 * 1e-6


def test_darcy_examples():
    p = PhysParams(lam=0.7, mu=2.0, gamma=2.0, A=0.5)
    flat = PMState(SpectralField(G1, values=np.full(G1.shape, 1.3)), 0.0)
    assert all(np.max(np.abs(c.values)) == 0.0 for c in darcy_velocity(flat, p))

    _, pm = build_initial_data("well-prepared", p.replace(), G1, 0.2)
    state = PMState(pm.rho_star, 1.5)
    u = darcy_velocity(state, p)[0]
    ref = -(1 + 1.5) ** 0.7 / 2.0 * pm.rho_star.gradient()[0].values
    assert np.max(np.abs(u.values - ref)) <= 1e-10 * np.max(np.abs(ref))


def _continuity_residual(traj, p):
    """max over interior snapshots of |d_t rho + div(rho u*)| relative to |div(rho u*)|, centred in time."""
    worst = 0.0
    for i in range(1, len(traj.times) - 1):
        t0, t1, t2 = traj.times[i - 1:i + 2]
        s = traj.states[i]
        drho = (traj.states[i + 1].rho_star.values - traj.states[i - 1].rho_star.values) / (t2 - t0)
        u = darcy_velocity(s, p)
        flux = [SpectralField(s.grid, values=s.rho_star.values * c.values) for c in u]
        div = sum(f.gradient()[k].values for k, f in enumerate(flux))
        worst = max(worst, float(np.max(np.abs(drho + div)) / np.max(np.abs(div))))
    return worst


def test_darcy_continuity_identity_along_the_porous_medium_flow():
    p = PhysParams(lam=0.5, mu=1.0, epsilon=0.5)
    # fine enough in space that the residual is the second-order time error of the run
    g = Grid(dim=1, n_points=256, length=16 * np.pi)
    _, pm = build_initial_data("well-prepared", p, g, 0.2)
    res = []
    for n in (200, 400, 800):
        traj = run_porous_medium(pm, 1.0, p, DtPolicy(fixed=1.0 / n), "all")
        res.append(_continuity_residual(traj, p))
    assert res[0] / res[1] > 3.5 and res[1] / res[2] > 3.5
    assert res[2] <= 1e-4


def test_well_prepared_data_have_no_damped_mode():
    for g in (G1, G2):
        p = P1.replace(dim=g.dim)
        init, _ = build_initial_data("well-prepared", p, g, 0.2)
        z = damped_mode(init, p)
        assert max(np.max(np.abs(c.values)) for c in z) <= 1e-12


def test_gap_controlled_scaling():
    base = PhysParams(lam=0.5, mu=1.0)
    gaps = []
    for eps in (0.1, 0.4):
        p = base.replace(epsilon=eps)
        init, pm = build_initial_data("gap-controlled(0.5)", p, G1, 0.1)
        diff = SpectralField(G1, values=init.density(p) - pm.rho_star.values)
        gaps.append(besov_norm(diff, G1.dim / 2 - 1))
    assert gaps[0] / gaps[1] == pytest.approx(math.sqrt(0.1 / 0.4), rel=1e-10)


def test_filtered_data_velocity_scales_with_eps():
    norms = []
    for eps in (0.1, 0.3):
        p = PhysParams(epsilon=eps)
        init, _ = build_initial_data("filtered-small-velocity", p, G1, 0.1)
        norms.append(init.u[0].l2_norm())
    assert norms[1] / norms[0] == pytest.approx(3.0, rel=1e-12)


def test_singular_velocity_is_order_one_over_eps():
    a, _ = build_initial_data("ill-prepared-singular", PhysParams(epsilon=0.1), G1, 0.1)
    b, _ = build_initial_data("ill-prepared-O1", PhysParams(epsilon=0.1), G1, 0.1)
    assert a.u[0].l2_norm() == pytest.approx(10 * b.u[0].l2_norm(), rel=1e-12)


@pytest.mark.parametrize("kind, q", [("no-such-kind", None), ("gap-controlled", None), ("gap-controlled", -1.0)])
def test_bad_kinds_rejected(kind, q):
    with pytest.raises(ValueError):
        parse_kind(kind, q)


def test_amplitude_and_dimension_checked():
    with pytest.raises(ValueError):
        build_initial_data("ill-prepared-O1", P1, G1, 0.9)
    with pytest.raises(ValueError):
        build_initial_data("ill-prepared-O1", P1, G2, 0.1)


def test_monitor_triggers():
    s = EulerState.equilibrium(G1)
    assert blowup_monitor(s, MonitorCaps(gradient_cap=1e-30), P1) is None
    bad = EulerState(SpectralField(G1, values=np.where(np.arange(64) == 3, np.nan, 0.0)), [SpectralField.zeros(G1)])
    assert blowup_monitor(bad, MonitorCaps(), P1) == "nan"
    low = EulerState(SpectralField(G1, values=np.full(G1.shape, -5.0)), [SpectralField.zeros(G1)])
    assert blowup_monitor(low, MonitorCaps(), P1) == "admissibility"
    init, _ = build_initial_data("ill-prepared-O1", P1, G1, 0.1)
    assert blowup_monitor(init, MonitorCaps(gradient_cap=1e-6), P1) == "gradient-cap"
    assert blowup_monitor(init, MonitorCaps(integral_budget=1.0), P1, gradient_integral=2.0) == "gradient-integral"


def test_monitor_fire_carries_partial_trajectory():
    init, _ = build_initial_data("ill-prepared-O1", P1, G1, 0.1)
    with pytest.raises(BlowUpDetected) as exc:
        run_euler(init, 1.0, P1, DtPolicy(steps_per_T=50), monitor=MonitorCaps(integral_budget=1e-3))
    assert exc.value.trigger == "gradient-integral"
    assert exc.value.trajectory.blowup["trigger"] == "gradient-integral"
    assert 0 < exc.value.t < 1.0


def test_pm_step_checks_the_density_window():
    with pytest.raises(AdmissibilityError):
        pm_step(PMState(SpectralField(G1, values=np.full(G1.shape, 10.0))), 0.1, P1)


@pytest.mark.parametrize("kind", ["ill-prepared-O1", "gap-controlled(1)"])
def test_mass_conserved_along_runs(kind):
    p = P1.replace(dim=2)
    init, pm = build_initial_data(kind, p, G2, 0.2)
    e = run_euler(init, 1.0, p, DtPolicy(steps_per_T=100), 4)
    m = run_porous_medium(pm, 1.0, p, DtPolicy(steps_per_T=100), 4)
    assert e.mass_drift <= 1e-10 and m.mass_drift <= 1e-10


def test_snapshots_land_on_requested_times():
    init, pm = build_initial_data("ill-prepared-O1", P1, G1, 0.1)
    traj = run_euler(init, 1.0, P1, DtPolicy(steps_per_T=37), 4)
    assert traj.times == [0.0, 0.25, 0.5, 0.75, 1.0]
    times = np.linspace(0, 1, 11)
    pmt = run_porous_medium(pm, 1.0, P1, times=times)
    assert np.array_equal(pmt.times, times)
    with pytest.raises(KeyError):
        traj.at(0.3)


def test_layer_cap_resolves_the_initial_layer():
    p = PhysParams(lam=0.5, mu=1.0, epsilon=0.1)
    pol = DtPolicy(steps_per_T=100, layer_fraction=0.1)
    init, _ = build_initial_data("ill-prepared-O1", p, G1, 0.1)
    traj = run_euler(init, 1.0, p, pol, "all")
    assert traj.dt_history[0] <= 0.1 * p.epsilon**2 * (1 / p.mu) * (1 + 1e-12)
    assert max(traj.dt_history) <= 1.0 / 100 * (1 + 1e-12)


def test_export_is_deterministic(tmp_path):
    init, _ = build_initial_data("ill-prepared-O1", P1, G1, 0.1)
    texts = []
    for name in ("a", "b"):
        traj = run_euler(init, 0.5, P1, DtPolicy(steps_per_T=20), 2)
        table, man = traj.export(tmp_path / name, "run")
        texts.append((table.read_bytes(), man.read_bytes()))
        rows = np.loadtxt(table)
        assert rows.shape == (3, 1 + 2 * G1.n_points)
        assert json.loads(man.read_text())["fields"] == ["n", "u1"]
    assert texts[0] == texts[1]


def test_storage_helpers(tmp_path):
    assert run_length([0.1, 0.1, 0.2, 0.1]) == [[0.1, 2], [0.2, 1], [0.1, 1]]
    target = tmp_path / "deep" / "x.txt"
    atomic_write_text(target, "one")
    atomic_write_text(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["x.txt"]
