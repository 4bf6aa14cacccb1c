"""Geometric p-multigrid: coarsening plans, transfers, additive Schwarz smoothing, V-cycle."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem, build_system, surface_interpolate
from .basis import interpolation_matrix
from .direct import coarse_solver
from .mesh import Bathymetry, DofMap, LayeredMesh, build_dofmap


class InvalidPlanError(ValueError):
    pass


class SmootherBuildError(ArithmeticError):
    pass


def ceil_half(p: int) -> int:
    return math.ceil((p + 1) / 2)


def _coarser(p: int) -> int:
    c = ceil_half(p)
    return p - 1 if c >= p else c


@dataclass(frozen=True)
class CoarseningPlan:
    levels: tuple  # ((px, ps), ...) finest first, coarsest (1, 1) last

    def __post_init__(self):
        levels = tuple((int(a), int(b)) for a, b in self.levels)
        if not levels:
            raise InvalidPlanError("empty coarsening plan")
        if levels[-1] != (1, 1):
            raise InvalidPlanError(f"coarsest level must be (1, 1), got {levels[-1]}")
        for f, c in zip(levels, levels[1:]):
            if c[0] > f[0] or c[1] > f[1] or c == f:
                raise InvalidPlanError(f"level {c} does not coarsen {f}")
        object.__setattr__(self, "levels", levels)

    @property
    def finest(self) -> tuple[int, int]:
        return self.levels[0]

    def __len__(self):
        return len(self.levels)


def make_coarsening_plan(px: int, ps: int, levels=None) -> CoarseningPlan:
    """Semi-coarsen the larger order toward the smaller, then P <- ceil((P+1)/2).

    An explicit ``levels`` table overrides the rule. When the rule would stall
    (P = 2 gives ceil(3/2) = 2) the order steps to P - 1 instead.
    """
    if px < 1 or ps < 1:
        raise InvalidPlanError(f"orders must be >= 1, got ({px}, {ps})")
    if levels is not None:
        plan = CoarseningPlan(tuple(levels))
        if plan.finest != (px, ps):
            raise InvalidPlanError(f"explicit plan starts at {plan.finest}, expected {(px, ps)}")
        return plan
    out = [(px, ps)]
    while out[-1] != (1, 1):
        a, b = out[-1]
        if a > b:
            a = max(b, _coarser(a))
        elif b > a:
            b = max(a, _coarser(b))
        else:
            a = b = _coarser(a)
        out.append((a, b))
    return CoarseningPlan(tuple(out))


@dataclass(frozen=True, eq=False)
class TransferPair:
    P: sp.csr_matrix
    R: sp.csr_matrix


def build_transfer(coarse: DofMap, fine: DofMap) -> TransferPair:
    """Element-wise tensor interpolation from the coarse to the fine nodal space; R = P^T."""
    if coarse.mesh is not fine.mesh and coarse.mesh != fine.mesh:
        raise InvalidPlanError("transfer requires both levels on the same mesh")
    if coarse.px > fine.px or coarse.ps > fine.ps:
        raise InvalidPlanError(f"cannot prolongate from {coarse.orders} to {fine.orders}")
    local = np.kron(
        interpolation_matrix(coarse.basis_x, fine.basis_x),
        interpolation_matrix(coarse.basis_s, fine.basis_s),
    )
    ne = fine.mesh.n_elements
    nf, nc = fine.n_dofs, coarse.n_dofs
    owner = np.full(nf, ne)
    np.minimum.at(owner, fine.elem_nodes.ravel(), np.repeat(np.arange(ne), fine.elem_nodes.shape[1]))
    # each fine row is written once, by the lowest-numbered element containing it
    keep_rows = owner[fine.elem_nodes] == np.arange(ne)[:, None]
    e_idx, a_idx = np.nonzero(keep_rows)
    rows = np.repeat(fine.elem_nodes[e_idx, a_idx], local.shape[1])
    cols = coarse.elem_nodes[e_idx].ravel()
    vals = local[a_idx].ravel()
    nz = vals != 0.0
    P = sp.csr_matrix((vals[nz], (rows[nz], cols[nz])), shape=(nf, nc))
    P.sort_indices()
    R = P.T.tocsr()
    R.sort_indices()
    return TransferPair(P, R)


def overlap_for(orders, mode="fixed", overlap: int = 1, cap: int | None = None) -> tuple[int, int]:
    """Per-direction overlap in nodes: fixed, or refined = min(cap, ceil((P+1)/2))."""
    if mode == "fixed":
        return (int(overlap), int(overlap))
    if mode == "refined":
        ox, os_ = ceil_half(orders[0]), ceil_half(orders[1])
        if cap is not None:
            ox, os_ = min(cap, ox), min(cap, os_)
        return (ox, os_)
    raise ValueError(f"unknown overlap mode {mode!r}")


@dataclass(eq=False)
class SchwarzSmoother:
    """S^{-1} = W sum_k R_k^T (R_k A R_k^T)^{-1} R_k, stored as W (diagonal) and the sum."""

    subdomains: list
    weights: np.ndarray
    operator: sp.csr_matrix
    overlap: tuple

    def apply(self, r):
        return self.weights * (self.operator @ r)

    def apply_transpose(self, r):
        return self.operator @ (self.weights * r)

    def dense(self) -> np.ndarray:
        return self.weights[:, None] * self.operator.toarray()


def subdomain_nodes(dofmap: DofMap, element: int, overlap) -> np.ndarray:
    ox, os_ = (overlap, overlap) if np.isscalar(overlap) else overlap
    i, j = divmod(element, dofmap.mesh.n_sigma)
    px, ps = dofmap.px, dofmap.ps
    ix = np.arange(max(0, i * px - ox), min(dofmap.nx_nodes, (i + 1) * px + ox + 1))
    iz = np.arange(max(0, j * ps - os_), min(dofmap.ns_nodes, (j + 1) * ps + os_ + 1))
    return (ix[:, None] * dofmap.ns_nodes + iz[None, :]).ravel()


@dataclass(frozen=True, eq=False)
class _SchwarzLayout:
    subdomains: list
    groups: list  # (element ids, (g, s) node ids, (g, s, s) positions in A.data or -1)
    rows: np.ndarray
    cols: np.ndarray
    count: np.ndarray


_layouts: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _data_positions(A: sp.csr_matrix, rows, cols) -> np.ndarray:
    """Index of each (row, col) in A.data, -1 where the entry is not stored."""
    n = A.shape[1]
    keys = np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr)) * n + A.indices
    q = rows.astype(np.int64) * n + cols
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, len(keys) - 1)
    return np.where(keys[pos] == q, pos, -1)


def _layout(system: AssembledSystem, overlap) -> _SchwarzLayout:
    dofmap = system.dofmap
    A = system.A
    key = (overlap, A.nnz, A.indptr.tobytes().__hash__(), A.indices.tobytes().__hash__())
    cache = _layouts.setdefault(dofmap, {})
    if key in cache:
        return cache[key]
    subs = [subdomain_nodes(dofmap, e, overlap) for e in range(dofmap.mesh.n_elements)]
    by_size: dict = {}
    for e, idx in enumerate(subs):
        by_size.setdefault(len(idx), []).append(e)
    groups = []
    for size, els in sorted(by_size.items()):
        idx = np.stack([subs[e] for e in els])
        r = np.repeat(idx, size, axis=1)
        c = np.tile(idx, (1, size))
        pos = _data_positions(A, r.ravel(), c.ravel()).reshape(len(els), size, size)
        groups.append((np.asarray(els), idx, pos))
    rows = np.concatenate([np.repeat(s, len(s)) for s in subs])
    cols = np.concatenate([np.tile(s, len(s)) for s in subs])
    count = np.zeros(A.shape[0])
    for s in subs:
        count[s] += 1
    lay = _SchwarzLayout(subs, groups, rows, cols, count)
    cache[key] = lay
    return lay


def build_schwarz(system: AssembledSystem, overlap=1) -> SchwarzSmoother:
    """One subdomain per element, grown by `overlap` node layers per direction.

    `overlap` is an int or an (x, sigma) pair. Local blocks are Cholesky-checked
    and inverted once; the weighted sum is kept as one sparse matrix.
    """
    if np.isscalar(overlap):
        if overlap < 0:
            raise ValueError("overlap must be >= 0")
        overlap = (int(overlap), int(overlap))
    overlap = tuple(int(o) for o in overlap)
    A = system.A.tocsr()
    n = A.shape[0]
    lay = _layout(system, overlap)
    if np.any(lay.count == 0):
        raise SmootherBuildError("some nodes belong to no subdomain")
    data = np.append(A.data, 0.0)
    inverses = [None] * len(lay.subdomains)
    for els, idx, pos in lay.groups:
        blocks = data[pos]
        try:
            np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError as exc:
            bad = [int(e) for e, b in zip(els, blocks) if not _is_spd(b)]
            raise SmootherBuildError(f"local block of element(s) {bad[:5]} is not SPD: {exc}") from None
        inv = np.linalg.inv(blocks)
        inv = 0.5 * (inv + inv.transpose(0, 2, 1))
        for e, b in zip(els, inv):
            inverses[e] = b.ravel()
    vals = np.concatenate(inverses)
    M = sp.csr_matrix((vals, (lay.rows, lay.cols)), shape=(n, n))
    M.sum_duplicates()
    M.sort_indices()
    return SchwarzSmoother(lay.subdomains, 1.0 / lay.count, M, overlap)


def _is_spd(block) -> bool:
    try:
        np.linalg.cholesky(block)
        return True
    except np.linalg.LinAlgError:
        return False


def smooth(smoother: SchwarzSmoother, A, u, f, sweeps: int, transpose: bool = False):
    """`sweeps` steps of u <- u + S^{-1} (f - A u)."""
    apply = smoother.apply_transpose if transpose else smoother.apply
    for _ in range(sweeps):
        u = u + apply(f - A @ u)
    return u


@dataclass(eq=False)
class Level:
    system: AssembledSystem
    smoother: SchwarzSmoother | None = None
    transfer: TransferPair | None = None  # from the next coarser level to this one
    free: np.ndarray | None = None

    @property
    def A(self):
        return self.system.A

    @property
    def dofmap(self) -> DofMap:
        return self.system.dofmap


@dataclass(eq=False)
class MGHierarchy:
    """Levels finest first. ``symmetric`` post-smooths with the adjoint smoother."""

    levels: list
    coarse: object
    nu1: int = 3
    nu2: int = 3
    overlap_mode: str = "fixed"
    overlap: int = 1
    overlap_cap: int | None = None
    galerkin: bool = False
    symmetric: bool = False
    builds: dict = field(default_factory=lambda: {"smoother": 0, "coarse": 0})

    @property
    def fine(self) -> Level:
        return self.levels[0]

    @property
    def plan(self) -> CoarseningPlan:
        return CoarseningPlan(tuple(lv.dofmap.orders for lv in self.levels))

    def level_overlap(self, k: int):
        return overlap_for(self.levels[k].dofmap.orders, self.overlap_mode, self.overlap, self.overlap_cap)

    def set_system(self, k: int, system: AssembledSystem) -> None:
        """Replace the operator of level k and refactor what depends on it."""
        lv = self.levels[k]
        lv.system = system
        if k == len(self.levels) - 1:
            self.coarse = coarse_solver(system.A)
            self.builds["coarse"] += 1
        else:
            lv.smoother = build_schwarz(system, self.level_overlap(k))
            self.builds["smoother"] += 1
        if self.galerkin and k < len(self.levels) - 1:
            self.set_system(k + 1, galerkin_coarse(self.levels[k], self.levels[k + 1]))


def _free_mask(system: AssembledSystem) -> np.ndarray:
    m = np.ones(system.n, dtype=bool)
    m[system.dirichlet_nodes] = False
    return m


def galerkin_coarse(fine: Level, coarse: Level) -> AssembledSystem:
    """R A P with Dirichlet-masked transfers, Dirichlet rows reset to identity."""
    mask_c = sp.diags(coarse.free.astype(float))
    Ph = fine.transfer.P @ mask_c
    A_c = (Ph.T @ fine.A @ Ph).tocsr()
    A_c = (A_c + sp.diags((~coarse.free).astype(float))).tocsr()
    A_c.sort_indices()
    return replace(coarse.system, A=A_c)


def build_hierarchy(systems, nu1=3, nu2=3, overlap=1, overlap_mode="fixed", overlap_cap=None,
                    galerkin=False, symmetric=False) -> MGHierarchy:
    """Hierarchy from per-level systems (finest first) that already carry Dirichlet rows."""
    systems = list(systems)
    levels = [Level(s, free=_free_mask(s)) for s in systems]
    for k in range(len(levels) - 1):
        levels[k].transfer = build_transfer(levels[k + 1].dofmap, levels[k].dofmap)
    h = MGHierarchy(levels, None, nu1, nu2, overlap_mode, overlap, overlap_cap, galerkin, symmetric)
    for k in range(len(levels)):
        if galerkin and k > 0:
            levels[k].system = galerkin_coarse(levels[k - 1], levels[k])
        if k < len(levels) - 1:
            levels[k].smoother = build_schwarz(levels[k].system, h.level_overlap(k))
            h.builds["smoother"] += 1
    h.coarse = coarse_solver(levels[-1].system.A)
    h.builds["coarse"] += 1
    return h


def level_systems(mesh: LayeredMesh, bathymetry: Bathymetry, plan: CoarseningPlan, eta=None,
                  coarse_eta="same", quadrature="lgl"):
    """Directly assembled operators on every level of `plan`.

    ``eta`` lives on the finest surface nodes. ``coarse_eta="same"`` re-samples it
    on coarse levels; ``"linear"`` uses eta = 0 (still-water metric) below the finest.
    """
    dofmaps = [build_dofmap(mesh, *orders) for orders in plan.levels]
    systems = []
    for k, dm in enumerate(dofmaps):
        if eta is None or (k > 0 and coarse_eta == "linear"):
            e = None
        else:
            e = surface_interpolate(np.asarray(eta), dofmaps[0], dm)
        systems.append(build_system(dm, bathymetry, e, quadrature))
    return systems


def v_cycle(level: int, u, f, hierarchy: MGHierarchy):
    """One recursive V-cycle on `level` (0 = finest); the coarsest level is solved directly."""
    levels = hierarchy.levels
    if level == len(levels) - 1:
        return hierarchy.coarse.solve(f)
    lv = levels[level]
    A = lv.A
    u = smooth(lv.smoother, A, u, f, hierarchy.nu1)
    r = f - A @ u
    coarse = levels[level + 1]
    rc = lv.transfer.R @ r
    rc[~coarse.free] = 0.0
    ec = v_cycle(level + 1, np.zeros_like(rc), rc, hierarchy)
    u = u + lv.transfer.P @ ec
    u = smooth(lv.smoother, A, u, f, hierarchy.nu2, transpose=hierarchy.symmetric)
    return u

