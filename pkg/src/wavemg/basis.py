"""Legendre-Gauss-Lobatto nodal machinery on the reference interval [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class InvalidOrderError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BasisSet:
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray
    bary_weights: np.ndarray

    @property
    def n(self) -> int:
        return self.order + 1


def _legendre(order, x):
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, order + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p


def _lgl_nodes(order):
    n = order
    # Chebyshev-Gauss-Lobatto seed
    x = -np.cos(np.pi * np.arange(n + 1) / n)
    # Newton on (1 - x^2) P'_N(x) written through the Legendre Vandermonde recursion
    # x <- x - (x P_N - P_{N-1}) / ((N+1) P_N)
    for _ in range(100):
        p = np.zeros((n + 1, n + 1))
        p[:, 0] = 1.0
        p[:, 1] = x
        for k in range(2, n + 1):
            p[:, k] = ((2 * k - 1) * x * p[:, k - 1] - (k - 1) * p[:, k - 2]) / k
        dx = (x * p[:, n] - p[:, n - 1]) / ((n + 1) * p[:, n])
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    x[0], x[-1] = -1.0, 1.0
    # enforce exact symmetry about 0
    x = 0.5 * (x - x[::-1])
    if n % 2 == 0:
        x[n // 2] = 0.0
    return x


def _barycentric_weights(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


def _diff_matrix(x, bw):
    n = len(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (bw[None, :] / bw[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    # negative-sum trick: rows annihilate constants exactly
    d[np.arange(n), np.arange(n)] = -d.sum(axis=1)
    return d


@lru_cache(maxsize=None)
def lgl_basis(order: int) -> BasisSet:
    """LGL nodes, quadrature weights and nodal differentiation matrix for degree `order`.

    Cached, so repeated calls for the same order return the same (read-only) object.
    """
    if int(order) != order or order < 1:
        raise InvalidOrderError(f"polynomial order must be an integer >= 1, got {order!r}")
    order = int(order)
    x = _lgl_nodes(order)
    p_n = _legendre(order, x)
    w = 2.0 / (order * (order + 1) * p_n**2)
    bw = _barycentric_weights(x)
    d = _diff_matrix(x, bw)
    for arr in (x, w, bw, d):
        arr.setflags(write=False)
    return BasisSet(order, x, w, d, bw)


def lagrange_matrix(basis: BasisSet, points) -> np.ndarray:
    """Evaluate the cardinal functions of `basis` at arbitrary points in [-1, 1].

    Row i holds all cardinal functions at points[i] (barycentric formula of the
    second kind; exact 0/1 rows where a point coincides with a node).
    """
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    x = basis.nodes
    bw = basis.bary_weights
    diff = pts[:, None] - x[None, :]
    hit = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = bw[None, :] / diff
        out = t / t.sum(axis=1, keepdims=True)
    rows = hit.any(axis=1)
    out[rows] = hit[rows].astype(float)
    return out


def interpolation_matrix(source: BasisSet, target: BasisSet) -> np.ndarray:
    """(target.n x source.n) matrix mapping nodal values on `source` to `target` nodes."""
    return lagrange_matrix(source, target.nodes)
