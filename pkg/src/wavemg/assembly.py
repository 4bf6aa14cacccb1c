"""sigma-transformed Laplace operator: metric tensor, CG assembly, boundary conditions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from .basis import interpolation_matrix, lagrange_matrix
from .mesh import FREE_SURFACE, Bathymetry, DofMap

_CHUNK = 2048


class DepthCollapseError(ArithmeticError):
    """Water depth h + eta became non-positive somewhere."""


class InvalidElementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Tensor quadrature on the reference square plus the maps from element nodes.

    ``vx``/``vs`` evaluate nodal values at the 1D points, ``gx``/``gs`` evaluate
    reference derivatives there.
    """

    points_x: np.ndarray
    points_s: np.ndarray
    weights: np.ndarray  # flattened (qx * qs,)
    vx: np.ndarray
    vs: np.ndarray
    dx: np.ndarray
    ds: np.ndarray


def quadrature_for(dofmap: DofMap, kind: str = "lgl", extra: int = 2) -> Quadrature:
    bx, bs = dofmap.basis_x, dofmap.basis_s
    if kind == "lgl":
        px, wx, ps, ws = bx.nodes, bx.weights, bs.nodes, bs.weights
        vx, vs = np.eye(bx.n), np.eye(bs.n)
    elif kind == "gauss":
        px, wx = leggauss(bx.order + extra)
        ps, ws = leggauss(bs.order + extra)
        vx, vs = lagrange_matrix(bx, px), lagrange_matrix(bs, ps)
    else:
        raise ValueError(f"unknown quadrature {kind!r}")
    return Quadrature(px, ps, np.outer(wx, ws).ravel(), vx, vs, vx @ bx.diff_matrix, vs @ bs.diff_matrix)


@dataclass(frozen=True, eq=False)
class MetricField:
    """Per-element, per-quadrature-point geometry of the sigma map.

    All arrays have shape (n_elements, n_quad). ``d_surface`` holds h + eta at
    the surface nodes of the level.
    """

    d: np.ndarray
    sigma_x: np.ndarray
    k11: np.ndarray
    k12: np.ndarray
    k22: np.ndarray
    det_j: np.ndarray
    d_surface: np.ndarray
    quadrature: Quadrature

    def tensor(self, e: int, q: int) -> np.ndarray:
        return np.array([[self.k11[e, q], self.k12[e, q]], [self.k12[e, q], self.k22[e, q]]])


def compute_metric(dofmap: DofMap, eta, bathymetry: Bathymetry, quadrature: str = "lgl") -> MetricField:
    """Metric tensor K = J J^T / det J of the map (x, z) -> (x, sigma).

    Uses the full Jacobian, so bathymetry slopes enter through
    sigma_x = h_x / d - sigma * d_x / d.
    """
    quad = quadrature_for(dofmap, quadrature)
    mesh = dofmap.mesh
    eta = np.zeros(dofmap.nx_nodes) if eta is None else np.asarray(eta, dtype=float)
    if eta.shape != (dofmap.nx_nodes,):
        raise ValueError(f"eta has shape {eta.shape}, expected ({dofmap.nx_nodes},)")

    d_surface = bathymetry.depth(dofmap.surface_x) + eta
    if np.any(d_surface <= 0) or not np.all(np.isfinite(d_surface)):
        raise DepthCollapseError(f"non-positive water depth, min d = {np.min(d_surface):.3e}")

    xv, sv = mesh.surface.x_nodes, mesh.sigma_nodes
    hx = np.diff(xv)
    # per surface element: points, eta, eta_x at the 1D quadrature points
    xq = 0.5 * (1 - quad.points_x)[None, :] * xv[:-1, None] + 0.5 * (1 + quad.points_x)[None, :] * xv[1:, None]
    eta_e = eta[dofmap.surface_elem_nodes]
    eta_q = eta_e @ quad.vx.T
    eta_xq = (eta_e @ quad.dx.T) * (2.0 / hx)[:, None]
    h_q = bathymetry.depth(xq)
    hx_q = bathymetry.slope(xq)
    d_col = h_q + eta_q
    if np.any(d_col <= 0):
        raise DepthCollapseError(f"non-positive water depth, min d = {np.min(d_col):.3e}")
    sq = 0.5 * (1 - quad.points_s)[None, :] * sv[:-1, None] + 0.5 * (1 + quad.points_s)[None, :] * sv[1:, None]

    nx, ns = mesh.n_x, mesh.n_sigma
    qx, qs = len(quad.points_x), len(quad.points_s)
    # broadcast to (nx, ns, qx, qs)
    d = np.broadcast_to(d_col[:, None, :, None], (nx, ns, qx, qs))
    h_x = np.broadcast_to(hx_q[:, None, :, None], (nx, ns, qx, qs))
    d_x = h_x + eta_xq[:, None, :, None]
    sigma = np.broadcast_to(sq[None, :, None, :], (nx, ns, qx, qs))
    sigma_x = h_x / d - sigma * d_x / d

    shape = (nx * ns, qx * qs)
    d = np.ascontiguousarray(d).reshape(shape)
    sigma_x = np.ascontiguousarray(sigma_x).reshape(shape)
    return MetricField(
        d=d,
        sigma_x=sigma_x,
        k11=d.copy(),
        k12=d * sigma_x,
        k22=d * sigma_x**2 + 1.0 / d,
        det_j=1.0 / d,
        d_surface=d_surface,
        quadrature=quad,
    )


def combine_metrics(alpha, m1: MetricField, beta, m2: MetricField) -> MetricField:
    """alpha * K1 + beta * K2 (only the tensor entries are combined)."""
    return replace(m1, k11=alpha * m1.k11 + beta * m2.k11, k12=alpha * m1.k12 + beta * m2.k12,
                   k22=alpha * m1.k22 + beta * m2.k22)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Sparse Laplace operator of one p-level.

    ``A_neumann`` is the operator before Dirichlet elimination (pure Neumann,
    singular); ``A`` equals it until boundary conditions are imposed.
    """

    A: sp.csr_matrix
    b: np.ndarray
    dirichlet_nodes: np.ndarray
    dofmap: DofMap
    metric: MetricField
    A_neumann: sp.csr_matrix
    bc_applied: bool = False

    @property
    def orders(self) -> tuple[int, int]:
        return self.dofmap.orders

    @property
    def n(self) -> int:
        return self.A.shape[0]


def element_matrices(dofmap: DofMap, metric: MetricField, elements=None) -> np.ndarray:
    """Local stiffness matrices int (K grad N_j) . grad N_i over the chosen elements."""
    quad = metric.quadrature
    gx = np.kron(quad.dx, quad.vs)
    gs = np.kron(quad.vx, quad.ds)
    elements = np.arange(dofmap.mesh.n_elements) if elements is None else np.asarray(elements)
    sx = 2.0 / dofmap.elem_dx[elements]
    ss = 2.0 / dofmap.elem_ds[elements]
    jac = 1.0 / (sx * ss)
    w = quad.weights[None, :] * jac[:, None]

    k11 = metric.k11[elements] * w * (sx * sx)[:, None]
    k12 = metric.k12[elements] * w * (sx * ss)[:, None]
    k22 = metric.k22[elements] * w * (ss * ss)[:, None]
    a = (gx.T[None] * k11[:, None, :]) @ gx
    a += (gs.T[None] * k22[:, None, :]) @ gs
    c = (gx.T[None] * k12[:, None, :]) @ gs
    a = 0.5 * (a + a.transpose(0, 2, 1)) + (c + c.transpose(0, 2, 1))
    return a


def assemble_laplace(dofmap: DofMap, metric: MetricField) -> AssembledSystem:
    """Global stiffness matrix (positive semi-definite sign convention) and zero rhs."""
    det = metric.det_j
    if np.any(~np.isfinite(det)) or np.any(det <= 0):
        raise InvalidElementError("singular element Jacobian")
    ne = dofmap.mesh.n_elements
    n_loc = dofmap.elem_nodes.shape[1]
    rows, cols, vals = [], [], []
    for start in range(0, ne, _CHUNK):
        els = np.arange(start, min(ne, start + _CHUNK))
        a = element_matrices(dofmap, metric, els)
        en = dofmap.elem_nodes[els]
        rows.append(np.repeat(en, n_loc, axis=1).ravel())
        cols.append(np.tile(en, (1, n_loc)).ravel())
        vals.append(a.ravel())
    n = dofmap.n_dofs
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return AssembledSystem(A, np.zeros(n), dofmap.boundary_nodes[FREE_SURFACE], dofmap, metric, A)


def dirichlet_operator(A_neumann: sp.csr_matrix, dirichlet_nodes) -> sp.csr_matrix:
    """Zero Dirichlet rows/columns and put 1 on their diagonal; sparsity pattern is kept."""
    n = A_neumann.shape[0]
    is_d = np.zeros(n, dtype=bool)
    is_d[dirichlet_nodes] = True
    A = A_neumann.copy()
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    cols = A.indices
    hit = is_d[rows] | is_d[cols]
    A.data[hit] = 0.0
    A.data[hit & (rows == cols)] = 1.0
    return A


def dirichlet_rhs(A_neumann: sp.csr_matrix, dirichlet_nodes, values) -> np.ndarray:
    lift = np.zeros(A_neumann.shape[0])
    lift[dirichlet_nodes] = values
    b = -(A_neumann @ lift)
    b[dirichlet_nodes] = values
    return b


def impose_boundary_conditions(system: AssembledSystem, phi_tilde) -> AssembledSystem:
    """Lift free-surface Dirichlet data into the rhs and replace those rows/columns by identity.

    Bottom and wall conditions are natural. The eliminated operator is reused
    when ``system`` already carries it.
    """
    phi_tilde = np.asarray(phi_tilde, dtype=float)
    nodes = system.dirichlet_nodes
    if phi_tilde.shape != nodes.shape:
        raise ValueError(f"phi_tilde has shape {phi_tilde.shape}, expected {nodes.shape}")
    A = system.A if system.bc_applied else dirichlet_operator(system.A_neumann, nodes)
    b = dirichlet_rhs(system.A_neumann, nodes, phi_tilde)
    return replace(system, A=A, b=b, bc_applied=True)


def vertical_velocity(phi: np.ndarray, metric: MetricField, dofmap: DofMap) -> np.ndarray:
    """w = (1/d) dphi/dsigma at sigma = 1, using the top layer's sigma derivative."""
    ps = dofmap.ps
    top = phi.reshape(dofmap.nx_nodes, dofmap.ns_nodes)[:, -(ps + 1):]
    ds = dofmap.mesh.sigma_nodes[-1] - dofmap.mesh.sigma_nodes[-2]
    dphi = top @ dofmap.basis_s.diff_matrix[-1] * (2.0 / ds)
    return dphi / metric.d_surface


def surface_interpolate(field: np.ndarray, source: DofMap, target: DofMap) -> np.ndarray:
    """Re-sample a surface field between two orders on the same mesh (element-wise)."""
    if source.px == target.px:
        return np.array(field, dtype=float)
    m = interpolation_matrix(source.basis_x, target.basis_x)
    local = field[source.surface_elem_nodes] @ m.T
    out = np.empty(target.nx_nodes)
    out[target.surface_elem_nodes] = local
    return out


def build_system(dofmap: DofMap, bathymetry: Bathymetry, eta=None, quadrature: str = "lgl") -> AssembledSystem:
    """Metric + assembly + (zero-data) Dirichlet elimination in one call."""
    metric = compute_metric(dofmap, eta, bathymetry, quadrature)
    system = assemble_laplace(dofmap, metric)
    return impose_boundary_conditions(system, np.zeros(len(system.dirichlet_nodes)))
