from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import G, dispersion_k_bisection, linear_period, zakharov_rates
from wavemg.assembly import DepthCollapseError, build_system
from wavemg.cases import preset_standing_wave
from wavemg.fnpf import (ConfigError, FnpfState, LaplaceStageSolver, LinearWave, RelaxationZone, Simulation,
                         UpdateStrategy, apply_relaxation, dispersion_k, erk4_step, incident_wave, rk4,
                         surface_rhs, update_operators)
from wavemg.mesh import Bathymetry, build_dofmap, build_structured, surface_integral
from wavemg.multigrid import make_coarsening_plan
from wavemg.solvers import SolverConfig, stop_threshold

WAVE = {"height": 0.02, "period": 2.02, "depth": 0.4, "x0": 0.0, "ramp_periods": 0.0}


def small_stage(strategy=3, eta0=None, **kw):
    bath = Bathymetry.piecewise_linear([1.0, 2.0], [0.5, 0.3])
    mesh = build_structured(0.0, 3.0, 6, 2, bath)
    dm = build_dofmap(mesh, 4, 4)
    cfg = kw.pop("config", SolverConfig("pcg", rtol=1e-10, atol=1e-14))
    if eta0 is None:
        eta0 = np.zeros(dm.nx_nodes)
    stage = LaplaceStageSolver(mesh, bath, make_coarsening_plan(4, 4), strategy, cfg, eta0=eta0, **kw)
    return stage, dm


def surface_fields(dm, seed=0):
    rng = np.random.default_rng(seed)
    x = dm.surface_x
    eta = 0.03 * np.sin(2 * x + rng.uniform(0, 6)) + 0.01 * np.cos(3 * x)
    phi = 0.1 * np.cos(1.5 * x + rng.uniform(0, 6))
    return eta, phi


# ---------------------------------------------------------------------------
# surface right-hand side


def test_still_water_rates_zero():
    dm = build_dofmap(build_structured(0, 1, 3, 1, Bathymetry.flat(1.0)), 4, 2)
    z = np.zeros(dm.nx_nodes)
    for linear in (False, True):
        de, dp = surface_rhs(dm, z, z, z, linear)
        assert np.all(de == 0) and np.all(dp == 0)


def test_linear_rates(rng):
    dm = build_dofmap(build_structured(0, 1, 3, 1, Bathymetry.flat(1.0)), 4, 2)
    eta, phi, w = (rng.standard_normal(dm.nx_nodes) for _ in range(3))
    de, dp = surface_rhs(dm, eta, phi, w, linear=True)
    np.testing.assert_array_equal(de, w)
    np.testing.assert_allclose(dp, -G * eta, rtol=1e-15)


@given(st.lists(st.floats(-0.5, 0.5), min_size=8, max_size=8))
def test_nonlinear_rates_match_pointwise_oracle(c):
    # polynomials of degree 3 are represented exactly by the P = 4 surface basis
    dm = build_dofmap(build_structured(0, 2, 4, 1, Bathymetry.flat(1.0)), 4, 2)
    x = dm.surface_x
    pe = np.polynomial.Polynomial(c[:4]) * 0.1
    pp = np.polynomial.Polynomial(c[4:])
    eta, phi = pe(x), pp(x)
    w = np.cos(x) * c[0]
    de, dp = surface_rhs(dm, eta, phi, w)
    oe, op = zakharov_rates(eta, phi, w, pe.deriv()(x), pp.deriv()(x))
    np.testing.assert_allclose(de, oe, atol=1e-9)
    np.testing.assert_allclose(dp, op, atol=1e-9)


# ---------------------------------------------------------------------------
# time stepping


def test_rk4_order_four():
    def err(dt):
        y = (np.array(1.0),)
        t = 0.0
        for _ in range(int(round(1.0 / dt))):
            y = rk4(y, t, dt, lambda t, y: (-y[0],))
            t += dt
        return abs(float(y[0]) - np.exp(-1.0))

    ratios = [err(dt) / err(dt / 2) for dt in (0.1, 0.05)]
    for r in ratios:
        assert 14.0 < r < 18.0


def test_erk4_rejects_bad_dt():
    stage, dm = small_stage()
    z = np.zeros(dm.nx_nodes)
    with pytest.raises(ValueError):
        erk4_step(FnpfState(0.0, z, z), 0.0, stage, dm)


@pytest.mark.parametrize("strategy", [1, 2, 3])
def test_still_water_is_fixed_point(strategy):
    sim = preset_standing_wave("still", n_x=4).build_simulation(strategy=strategy)
    sim.run(5)
    assert np.max(np.abs(sim.state.eta)) <= 1e-14
    assert np.max(np.abs(sim.state.phi_tilde)) <= 1e-14


def test_five_solves_per_step():
    sim = preset_standing_wave("linear", n_x=4).build_simulation()
    sim.run(3)
    assert len(sim.stage.records) == 1 + 5 * 3


def test_depth_collapse_propagates():
    stage, dm = small_stage()
    eta = np.full(dm.nx_nodes, -0.6)
    with pytest.raises(DepthCollapseError):
        stage(eta, np.zeros(dm.nx_nodes))


def test_linear_standing_wave_period():
    preset = preset_standing_wave("linear", periods=1.0, steps_per_period=40)
    k = 2 * np.pi / 2.0
    T = linear_period(k, 2.0)
    assert preset.dt * 40 == pytest.approx(T, rel=1e-12)
    sim = preset.build_simulation()
    eta0 = sim.state.eta.copy()
    sim.run(preset.n_steps)
    err = np.linalg.norm(sim.state.eta - eta0) / np.linalg.norm(eta0)
    assert err < 0.01


def test_closed_tank_mass_and_energy():
    preset = preset_standing_wave("linear", periods=2.0, steps_per_period=40)
    sim = preset.build_simulation()
    scale = surface_integral(sim.dofmap, np.abs(sim.state.eta))
    sim.run(preset.n_steps)
    mass = np.asarray(sim.history["mass"])
    energy = np.asarray(sim.history["energy"])
    assert np.max(np.abs(mass - mass[0])) / scale / 2.0 < 1e-8
    assert np.max(np.abs(energy - energy[0])) / energy[0] < 0.01


# ---------------------------------------------------------------------------
# relaxation


class FixedGammaZone(RelaxationZone):
    def gamma(self, x):
        return np.full(np.shape(x), float(self.x_end > 1e9))


def test_relaxation_gamma_one_keeps_state(rng):
    x = np.linspace(0, 3, 13)
    state = FnpfState(0.3, rng.standard_normal(13), rng.standard_normal(13))
    zone = FixedGammaZone(0.0, 2e9, "left", {"kind": "linear_monochromatic", "params": WAVE})
    out = apply_relaxation(state, [zone], x)
    np.testing.assert_array_equal(out.eta, state.eta)
    np.testing.assert_array_equal(out.phi_tilde, state.phi_tilde)


def test_relaxation_gamma_zero_gives_target(rng):
    x = np.linspace(0, 3, 13)
    state = FnpfState(0.3, rng.standard_normal(13), rng.standard_normal(13))
    zone = FixedGammaZone(0.0, 3.0, "left", {"kind": "linear_monochromatic", "params": WAVE})
    out = apply_relaxation(state, [zone], x)
    te, tp = incident_wave("linear_monochromatic", WAVE, 0.3, x)
    np.testing.assert_allclose(out.eta, te, atol=1e-15)
    np.testing.assert_allclose(out.phi_tilde, tp, atol=1e-15)


@pytest.mark.parametrize("side", ["left", "right"])
def test_gamma_profile(side):
    zone = RelaxationZone(1.0, 3.0, side)
    x = np.linspace(1.0, 3.0, 101)
    g = zone.gamma(x)
    if side == "right":
        g = g[::-1]
    assert g[0] == 0.0 and g[-1] == 1.0
    assert np.all(np.diff(g) >= 0)
    assert np.all(zone.gamma(np.array([0.0, 4.0])) == 1.0)


def test_absorption_zone_relaxes_to_rest(rng):
    x = np.linspace(0, 3, 31)
    state = FnpfState(0.0, rng.standard_normal(31), rng.standard_normal(31))
    out = apply_relaxation(state, [RelaxationZone(2.0, 3.0, "right")], x)
    assert out.eta[-1] == 0.0 and out.phi_tilde[-1] == 0.0
    np.testing.assert_array_equal(out.eta[:20], state.eta[:20])


# ---------------------------------------------------------------------------
# incident waves


def test_zero_amplitude_wave():
    e, p = incident_wave("linear_monochromatic", dict(WAVE, height=0.0), 1.0, np.linspace(0, 5, 7))
    assert np.all(e == 0) and np.all(p == 0)


def test_unsupported_wave_kind():
    with pytest.raises(ConfigError):
        incident_wave("stream_function_placeholder", WAVE, 0.0, np.zeros(3))
    with pytest.raises(ConfigError):
        incident_wave("linear_monochromatic", {"height": 0.1}, 0.0, np.zeros(3))


@given(st.floats(0.5, 20.0), st.floats(0.05, 50.0))
def test_dispersion_matches_bisection(omega, h):
    k = dispersion_k(omega, h)
    kb = dispersion_k_bisection(omega, h)
    assert abs(k - kb) <= 1e-10 * kb


def test_bar_wave_number_frozen():
    assert LinearWave(**WAVE).k == pytest.approx(1.681244179276287, rel=1e-12)


def test_linear_wave_satisfies_linear_surface_conditions():
    wave = LinearWave(**WAVE)
    x = np.linspace(0, 4, 17)
    t, dt = 0.7, 1e-5
    (e1, p1), (e2, p2) = wave.fields(t - dt, x), wave.fields(t + dt, x)
    eta, phi = wave.fields(t, x)
    a = 0.5 * wave.height
    theta = wave.k * x - wave.omega * t
    w = a * G / wave.omega * wave.k * np.tanh(wave.k * wave.depth) * np.sin(theta)
    np.testing.assert_allclose((e2 - e1) / (2 * dt), w, atol=1e-8)
    np.testing.assert_allclose((p2 - p1) / (2 * dt), -G * eta, atol=1e-8)


def test_ramp_starts_from_rest():
    wave = LinearWave(**dict(WAVE, ramp_periods=2.0))
    e, p = wave.fields(0.0, np.linspace(0, 4, 9))
    assert np.all(e == 0) and np.all(p == 0)


def test_generation_zone_amplitude_at_interface():
    depth, T, H = 0.4, 2.02, 0.02
    wave = {"kind": "linear_monochromatic",
            "params": {"height": H, "period": T, "depth": depth, "x0": 0.0, "ramp_periods": 2.0}}
    L = LinearWave(H, T, depth).wavelength
    x_max = 5 * L
    bath = Bathymetry.flat(depth)
    mesh = build_structured(0.0, x_max, 40, 1, bath)
    stage = LaplaceStageSolver(mesh, bath, make_coarsening_plan(4, 4), 3, SolverConfig("pcg", rtol=1e-8),
                               linear=True, warm_start=True)
    zones = [RelaxationZone(0.0, L, "left", wave), RelaxationZone(3 * L, x_max, "right")]
    x = stage.dofmap.surface_x
    z = np.zeros_like(x)
    sim = Simulation(stage, FnpfState(0.0, z, z), T / 40, zones, [L], linear=True)
    sim.run(400)
    g = np.asarray(sim.history["gauges"])[-80:, 0]
    amp = 0.5 * (g.max() - g.min())
    assert abs(amp - 0.5 * H) <= 0.02 * 0.5 * H


# ---------------------------------------------------------------------------
# update strategies


@pytest.mark.parametrize("name", ["I", "ii", "3", "III_full_nonlinear", 2])
def test_strategy_parse(name):
    assert isinstance(UpdateStrategy.parse(name), UpdateStrategy)


def test_strategy_parse_rejects():
    with pytest.raises(ConfigError):
        UpdateStrategy.parse("IV")


def test_strategy_one_keeps_operators():
    stage, dm = small_stage(1)
    before = [lv.system.A.copy() for lv in stage.hierarchy.levels]
    eta, phi = surface_fields(dm)
    for t in (0.1, 0.2):
        stage(eta * t * 10, phi, t)
    for A0, lv in zip(before, stage.hierarchy.levels):
        assert (A0 != lv.system.A).nnz == 0
        np.testing.assert_array_equal(A0.data, lv.system.A.data)


def test_strategy_three_at_rest_equals_two():
    s2, dm = small_stage(2)
    s3, _ = small_stage(3)
    z = np.zeros(dm.nx_nodes)
    update_operators(2, z, s2)
    update_operators(3, z, s3)
    for a, b in zip(s2.hierarchy.levels, s3.hierarchy.levels):
        np.testing.assert_array_equal(a.system.A.toarray(), b.system.A.toarray())


def test_strategy_two_coarse_levels_at_rest():
    s2, dm = small_stage(2)
    eta, _ = surface_fields(dm)
    update_operators(2, eta, s2)
    for lv in s2.hierarchy.levels[1:]:
        ref = build_system(lv.dofmap, s2.bathymetry, None)
        np.testing.assert_array_equal(lv.system.A.toarray(), ref.A.toarray())
    ref = build_system(dm, s2.bathymetry, eta)
    np.testing.assert_array_equal(s2.hierarchy.fine.system.A.toarray(), ref.A.toarray())


def test_strategies_agree_on_solution():
    cfg = SolverConfig("pcg", rtol=1e-9, atol=1e-14)
    stages = [small_stage(1, config=cfg, freeze_operator=False)[0], small_stage(2, config=cfg)[0],
              small_stage(3, config=cfg)[0]]
    dm = stages[0].dofmap
    eta, phi = surface_fields(dm, seed=3)
    sols = []
    for s in stages:
        s(eta, phi, 0.0)
        sols.append(s.last_phi)
    tol = 10 * stop_threshold(stages[2].system.b, cfg)
    for a in sols:
        for b in sols:
            assert np.max(np.abs(a - b)) <= tol


def test_warm_start_reuses_previous_solution():
    stage, dm = small_stage(3, warm_start=True, config=SolverConfig("pcg", rtol=1e-8))
    eta, phi = surface_fields(dm)
    stage(eta, phi, 0.0)
    stage(eta, phi, 0.0)
    assert stage.records[1].iterations == 0
