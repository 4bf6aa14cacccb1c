import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import LagrangeOracle, lgl_nodes, lgl_weights
from wavemg.basis import InvalidOrderError, interpolation_matrix, lagrange_matrix, lgl_basis

orders = st.integers(min_value=1, max_value=16)


def test_order_one_endpoints():
    b = lgl_basis(1)
    np.testing.assert_array_equal(b.nodes, [-1.0, 1.0])
    np.testing.assert_allclose(b.weights, [1.0, 1.0], atol=1e-15)


def test_order_two():
    b = lgl_basis(2)
    np.testing.assert_allclose(b.nodes, [-1.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(b.weights, [1 / 3, 4 / 3, 1 / 3], atol=1e-14)


def test_order_three():
    b = lgl_basis(3)
    r = 1 / np.sqrt(5)
    np.testing.assert_allclose(b.nodes, [-1, -r, r, 1], atol=1e-15)
    np.testing.assert_allclose(b.weights, [1 / 6, 5 / 6, 5 / 6, 1 / 6], atol=1e-14)


def test_order_four_frozen():
    # roots of (1 - x^2) P_4'(x): 0, +-sqrt(3/7); weights 1/10, 49/90, 32/45
    b = lgl_basis(4)
    s = np.sqrt(3 / 7)
    np.testing.assert_allclose(b.nodes, [-1, -s, 0, s, 1], atol=1e-15)
    np.testing.assert_allclose(b.weights, [0.1, 49 / 90, 32 / 45, 49 / 90, 0.1], atol=1e-14)


@pytest.mark.parametrize("order", [0, -1, -7])
def test_invalid_order(order):
    with pytest.raises(InvalidOrderError):
        lgl_basis(order)


@given(orders)
def test_against_numpy_legendre_oracle(order):
    b = lgl_basis(order)
    np.testing.assert_allclose(b.nodes, lgl_nodes(order), atol=1e-13)
    np.testing.assert_allclose(b.weights, lgl_weights(order), atol=1e-13)


@given(orders)
def test_node_and_weight_invariants(order):
    b = lgl_basis(order)
    assert b.nodes[0] == -1.0 and b.nodes[-1] == 1.0
    assert np.all(np.diff(b.nodes) > 0)
    np.testing.assert_allclose(b.nodes, -b.nodes[::-1], atol=1e-13)
    assert np.all(b.weights > 0)
    assert abs(b.weights.sum() - 2.0) < 1e-13


@given(orders)
def test_diff_matrix_on_constants_and_linears(order):
    D = lgl_basis(order).diff_matrix
    x = lgl_basis(order).nodes
    assert np.max(np.abs(D @ np.ones_like(x))) < 1e-12
    assert np.max(np.abs(D @ x - 1.0)) < 1e-12


@given(orders, st.integers(0, 2**31 - 1))
def test_quadrature_exact_to_degree_2p_minus_1(order, seed):
    b = lgl_basis(order)
    c = np.random.default_rng(seed).uniform(-1, 1, 2 * order)
    poly = np.polynomial.Polynomial(c)
    exact = poly.integ()(1.0) - poly.integ()(-1.0)
    assert abs(b.weights @ poly(b.nodes) - exact) < 1e-12


@given(orders, st.integers(0, 2**31 - 1))
def test_diff_matrix_exact_on_polynomials(order, seed):
    b = lgl_basis(order)
    c = np.random.default_rng(seed).uniform(-1, 1, order + 1)
    poly = np.polynomial.Polynomial(c)
    assert np.max(np.abs(b.diff_matrix @ poly(b.nodes) - poly.deriv()(b.nodes))) < 1e-10


def test_deterministic():
    a = lgl_basis(9)
    lgl_basis.cache_clear()
    b = lgl_basis(9)
    assert a.nodes.tobytes() == b.nodes.tobytes()
    assert a.diff_matrix.tobytes() == b.diff_matrix.tobytes()


def test_interpolation_identity_and_midpoint():
    b2 = lgl_basis(2)
    np.testing.assert_allclose(interpolation_matrix(b2, b2), np.eye(3), atol=1e-15)
    m = interpolation_matrix(lgl_basis(1), b2)
    np.testing.assert_allclose(m[1], [0.5, 0.5], atol=1e-15)


@given(orders, orders)
def test_interpolation_rows_sum_to_one(p, q):
    m = interpolation_matrix(lgl_basis(p), lgl_basis(q))
    assert m.shape == (q + 1, p + 1)
    assert np.max(np.abs(m.sum(axis=1) - 1.0)) < 1e-13


@given(st.integers(1, 10), st.integers(0, 10), st.integers(0, 2**31 - 1))
def test_interpolation_round_trip(p, extra, seed):
    a, b = lgl_basis(p), lgl_basis(p + extra)
    v = np.random.default_rng(seed).uniform(-1, 1, p + 1)
    back = interpolation_matrix(b, a) @ (interpolation_matrix(a, b) @ v)
    assert np.max(np.abs(back - v)) < 1e-11


def test_lagrange_matrix_matches_vandermonde_oracle(rng):
    b = lgl_basis(7)
    pts = rng.uniform(-1, 1, 15)
    np.testing.assert_allclose(lagrange_matrix(b, pts), LagrangeOracle(b.nodes).values(pts), atol=1e-12)


def test_basis_is_read_only():
    b = lgl_basis(3)
    with pytest.raises(ValueError):
        b.nodes[0] = 0.0
