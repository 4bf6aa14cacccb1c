from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_schwarz
from wavemg.assembly import build_system, impose_boundary_conditions
from wavemg.mesh import Bathymetry, build_dofmap, build_structured
from wavemg.multigrid import (CoarseningPlan, InvalidPlanError, SmootherBuildError, build_hierarchy,
                              build_schwarz, build_transfer, galerkin_coarse, level_systems,
                              make_coarsening_plan, overlap_for, smooth, subdomain_nodes, v_cycle)
from wavemg.solvers import SolverConfig, solve_direct, solve_mg


def system_on(n_x=2, n_s=2, px=3, ps=3, depth=1.0, eta_amp=0.0, quadrature="lgl", bath=None):
    bath = bath or Bathymetry.flat(depth)
    dm = build_dofmap(build_structured(0.0, 2.0, n_x, n_s, bath), px, ps)
    eta = eta_amp * np.sin(np.pi * dm.surface_x) if eta_amp else None
    return build_system(dm, bath, eta, quadrature), bath


def hierarchy_on(n_x=4, n_s=2, orders=(4, 4), eta_amp=0.05, **kw):
    bath = Bathymetry.piecewise_linear([0.5, 1.5], [1.0, 0.5])
    mesh = build_structured(0.0, 2.0, n_x, n_s, bath)
    plan = make_coarsening_plan(*orders)
    dm = build_dofmap(mesh, *orders)
    eta = eta_amp * np.cos(np.pi * dm.surface_x)
    systems = level_systems(mesh, bath, plan, eta)
    h = build_hierarchy(systems, **kw)
    phi = 0.1 * np.sin(np.pi * dm.surface_x)
    return impose_boundary_conditions(h.fine.system, phi), h


# -- coarsening plans ---------------------------------------------------------

def test_explicit_table():
    assert make_coarsening_plan(6, 6, [(6, 6), (3, 3), (1, 1)]).levels == ((6, 6), (3, 3), (1, 1))


def test_single_level():
    assert make_coarsening_plan(1, 1).levels == ((1, 1),)


def test_formula_with_guard():
    assert [p for p, _ in make_coarsening_plan(9, 9).levels] == [9, 5, 3, 2, 1]


def test_semi_coarsening_first():
    assert make_coarsening_plan(9, 7).levels[:2] == ((9, 7), (7, 7))
    assert make_coarsening_plan(2, 6).levels[1] == (2, 4)


@pytest.mark.parametrize("levels", [[(6, 6), (3, 3)], [(6, 6), (6, 6), (1, 1)], [(3, 3), (4, 3), (1, 1)], []])
def test_invalid_tables(levels):
    with pytest.raises(InvalidPlanError):
        CoarseningPlan(tuple(levels))


def test_table_must_start_at_orders():
    with pytest.raises(InvalidPlanError):
        make_coarsening_plan(5, 5, [(6, 6), (3, 3), (1, 1)])


@given(st.integers(1, 20), st.integers(1, 20))
def test_formula_plans_terminate_and_decrease(px, ps):
    plan = make_coarsening_plan(px, ps)
    assert plan.finest == (px, ps)
    assert plan.levels[-1] == (1, 1)
    for f, c in zip(plan.levels, plan.levels[1:]):
        assert c[0] <= f[0] and c[1] <= f[1] and c != f


def test_refined_overlap_rule():
    assert overlap_for((9, 7), "refined") == (5, 4)
    assert overlap_for((9, 7), "refined", cap=3) == (3, 3)
    assert overlap_for((9, 7), "fixed", 1) == (1, 1)


# -- transfers -------------------------------------------------------------------

def test_identical_levels_identity():
    dm = build_dofmap(build_structured(0, 1, 3, 2), 3, 2)
    t = build_transfer(dm, dm)
    assert abs(t.P - sp.identity(dm.n_dofs)).max() == 0


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 3),
       st.integers(0, 3))
@settings(max_examples=20)
def test_transfer_properties(n_x, n_s, pcx, pcs, dx, ds):
    mesh = build_structured(-1.0, 2.0, n_x, n_s)
    coarse = build_dofmap(mesh, pcx, pcs)
    fine = build_dofmap(mesh, pcx + dx, pcs + ds)
    t = build_transfer(coarse, fine)
    # restriction is the exact transpose
    assert (t.R != t.P.T.tocsr()).nnz == 0
    np.testing.assert_array_equal(t.R.toarray(), t.P.toarray().T)
    assert np.max(np.abs(t.P @ np.ones(coarse.n_dofs) - 1.0)) < 1e-13
    xs = lambda dm: dm.coords[:, 0] * dm.coords[:, 1]  # noqa: E731
    assert np.max(np.abs(t.P @ xs(coarse) - xs(fine))) < 1e-12


def test_transfer_order_direction():
    mesh = build_structured(0, 1, 2, 1)
    with pytest.raises(InvalidPlanError):
        build_transfer(build_dofmap(mesh, 4, 4), build_dofmap(mesh, 2, 2))


def test_transfer_requires_same_mesh():
    with pytest.raises(InvalidPlanError):
        build_transfer(build_dofmap(build_structured(0, 1, 2, 1), 1, 1), build_dofmap(build_structured(0, 1, 3, 1), 2, 2))


# -- Schwarz smoother ------------------------------------------------------------

def test_single_element_no_overlap_is_exact(rng):
    s, _ = system_on(1, 1, 4, 3)
    sm = build_schwarz(s, 0)
    f = rng.standard_normal(s.n)
    u = smooth(sm, s.A, np.zeros(s.n), f, 1)
    np.testing.assert_allclose(u, np.linalg.solve(s.A.toarray(), f), atol=1e-10)


def test_block_jacobi_matches_dense(rng):
    s, _ = system_on(2, 2, 3, 3, eta_amp=0.05)
    sm = build_schwarz(s, 0)
    subs = [subdomain_nodes(s.dofmap, e, 0) for e in range(s.dofmap.mesh.n_elements)]
    ref = dense_schwarz(s.A.toarray(), subs)
    r = rng.standard_normal(s.n)
    assert np.max(np.abs(sm.apply(r) - ref @ r)) < 1e-12


def test_weights_count_subdomains():
    s, _ = system_on(3, 1, 2, 2)
    sm = build_schwarz(s, 1)
    dm = s.dofmap
    x = dm.coords[:, 0]
    # elements of width 2/3, node spacing 1/3: the middle element's midpoint column is
    # reached by both neighbours' overlap, shared vertex columns by two subdomains
    w = np.round(1.0 / sm.weights).astype(int)
    assert set(w.tolist()) == {1, 2, 3}
    np.testing.assert_array_equal(w[np.isclose(x, 1.0)], 3)
    np.testing.assert_array_equal(w[np.isclose(x, 2 / 3)], 2)
    np.testing.assert_array_equal(w[np.isclose(x, 1 / 3)], 2)
    np.testing.assert_array_equal(w[np.isclose(x, 0.0)], 1)
    np.testing.assert_allclose(sm.weights, 1.0 / w, rtol=0, atol=0)


@pytest.mark.parametrize("overlap", [0, 1, 2, (2, 1)])
def test_smoother_matches_dense_formula(rng, overlap):
    s, _ = system_on(3, 2, 3, 2, eta_amp=0.05)
    assert s.n <= 500
    sm = build_schwarz(s, overlap)
    subs = [subdomain_nodes(s.dofmap, e, overlap) for e in range(s.dofmap.mesh.n_elements)]
    ref = dense_schwarz(s.A.toarray(), subs)
    r = rng.standard_normal(s.n)
    assert np.max(np.abs(sm.apply(r) - ref @ r)) < 1e-12
    np.testing.assert_allclose(sm.dense(), ref, atol=1e-12)


def test_summed_local_inverses_symmetric():
    s, _ = system_on(3, 2, 3, 3, eta_amp=0.05)
    M = build_schwarz(s, 1).operator
    assert abs(M - M.T).max() < 1e-12


def test_exact_solution_gets_zero_correction(rng):
    s, _ = system_on(2, 2, 3, 3)
    u = rng.standard_normal(s.n)
    f = s.A @ u
    sm = build_schwarz(s, 1)
    assert np.max(np.abs(smooth(sm, s.A, u, f, 1) - u)) < 1e-12


def test_indefinite_block_rejected():
    s, _ = system_on(2, 1, 2, 2)
    bad = replace(s, A=(s.A - 50.0 * sp.identity(s.n)).tocsr())
    with pytest.raises(SmootherBuildError):
        build_schwarz(bad, 0)


def test_negative_overlap_rejected():
    s, _ = system_on(2, 1, 2, 2)
    with pytest.raises(ValueError):
        build_schwarz(s, -1)


def test_smoothing_contracts(rng):
    s, _ = system_on(4, 2, 4, 4, depth=1.0)
    sm = build_schwarz(s, 1)
    u0 = rng.standard_normal(s.n)
    u0[s.dirichlet_nodes] = 0.0
    u = smooth(sm, s.A, u0, np.zeros(s.n), 50)
    assert np.linalg.norm(u) <= 0.1 * np.linalg.norm(u0)


def test_smoothing_energy_norm_non_increasing(rng):
    s, _ = system_on(4, 2, 4, 3, eta_amp=0.05)
    sm = build_schwarz(s, 1)
    ustar = rng.standard_normal(s.n)
    f = s.A @ ustar
    u = np.zeros(s.n)
    last = np.inf
    for _ in range(20):
        u = smooth(sm, s.A, u, f, 1)
        e = u - ustar
        en = float(e @ (s.A @ e))
        assert en <= last * (1 + 1e-12)
        last = en


# -- V-cycle ---------------------------------------------------------------------

def test_single_level_vcycle_is_direct(rng):
    bath = Bathymetry.flat(1.0)
    mesh = build_structured(0, 1, 3, 2, bath)
    systems = level_systems(mesh, bath, make_coarsening_plan(1, 1))
    h = build_hierarchy(systems)
    s = replace(systems[0], b=rng.standard_normal(systems[0].n))
    u = v_cycle(0, np.zeros(s.n), s.b, h)
    np.testing.assert_allclose(u, solve_direct(s)[0], atol=1e-12)


def test_zero_in_zero_out():
    s, h = hierarchy_on()
    assert np.max(np.abs(v_cycle(0, np.zeros(s.n), np.zeros(s.n), h))) == 0.0


def test_coarse_factorisation_exact(rng):
    s, h = hierarchy_on()
    c = h.levels[-1].system
    f = rng.standard_normal(c.n)
    assert np.linalg.norm(c.A @ h.coarse.solve(f) - f) < 1e-12 * np.linalg.norm(f)


def test_dimensions_consistent():
    s, h = hierarchy_on(orders=(6, 4))
    for fine, coarse in zip(h.levels, h.levels[1:]):
        assert fine.transfer.P.shape == (fine.system.n, coarse.system.n)
        assert fine.transfer.R.shape == (coarse.system.n, fine.system.n)


def test_vcycle_contraction_power_iteration(rng):
    for orders in [(3, 3), (4, 4), (6, 4)]:
        s, h = hierarchy_on(orders=orders)
        e = rng.standard_normal(s.n)
        e[s.dirichlet_nodes] = 0.0
        rho = 0.0
        for _ in range(15):
            new = e - v_cycle(0, np.zeros(s.n), s.A @ e, h)
            rho = np.linalg.norm(new) / np.linalg.norm(e)
            e = new / np.linalg.norm(new)
        assert rho < 1.0


def _mg_q(s, h, iters=6):
    _, rep = solve_mg(s, h, SolverConfig("mg", rtol=1e-300, atol=1e-300, i_max=iters))
    return float(np.exp(np.mean(np.log(rep.q[1:iters]))))


def test_overlap_one_not_worse_than_zero():
    for orders in [(4, 4), (6, 6)]:
        s0, h0 = hierarchy_on(orders=orders, overlap=0)
        s1, h1 = hierarchy_on(orders=orders, overlap=1)
        assert _mg_q(s1, h1) <= _mg_q(s0, h0)


def test_vcycle_rate_small_problem():
    s, h = hierarchy_on(n_x=6, orders=(6, 6))
    assert _mg_q(s, h) <= 0.15


def test_galerkin_matches_direct_assembly_on_flat_metric():
    bath = Bathymetry.flat(1.5)
    mesh = build_structured(0.0, 2.0, 3, 2, bath)
    plan = make_coarsening_plan(4, 4)
    systems = level_systems(mesh, bath, plan, quadrature="gauss")
    h = build_hierarchy(systems, galerkin=False)
    for k in range(len(h.levels) - 1):
        rap = galerkin_coarse(h.levels[k], h.levels[k + 1]).A
        direct = h.levels[k + 1].system.A
        assert sp.linalg.norm(rap - direct) / sp.linalg.norm(direct) < 1e-10


def test_galerkin_hierarchy_solves(rng):
    s, h = hierarchy_on(galerkin=True)
    u, rep = solve_mg(s, h, SolverConfig("mg", rtol=1e-10))
    assert rep.converged
    np.testing.assert_allclose(u, solve_direct(s)[0], atol=1e-8)


def test_symmetric_variant_uses_adjoint(rng):
    s, h = hierarchy_on(symmetric=True)
    r = rng.standard_normal(s.n)
    z = rng.standard_normal(s.n)
    a = z @ v_cycle(0, np.zeros(s.n), r, h)
    b = r @ v_cycle(0, np.zeros(s.n), z, h)
    assert abs(a - b) < 1e-10 * max(abs(a), 1.0)


def test_set_system_rebuilds_smoother():
    s, h = hierarchy_on()
    before = dict(h.builds)
    h.set_system(0, h.levels[0].system)
    assert h.builds["smoother"] == before["smoother"] + 1
    h.set_system(len(h.levels) - 1, h.levels[-1].system)
    assert h.builds["coarse"] == before["coarse"] + 1
