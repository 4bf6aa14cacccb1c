"""Layered quadrilateral meshes of the (x, sigma) computational domain.

sigma runs from 0 at the sea bed to 1 at the free surface. Elements are stored
column by column: element ``e = i * n_sigma + j`` sits in horizontal column ``i``
and vertical layer ``j``; vertex ``v = i * (n_sigma + 1) + j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .basis import BasisSet, lagrange_matrix, lgl_basis

FREE_SURFACE = "FreeSurface"
BOTTOM = "Bottom"
WALL_LEFT = "WallLeft"
WALL_RIGHT = "WallRight"
TAGS = (FREE_SURFACE, BOTTOM, WALL_LEFT, WALL_RIGHT)

MESH_HEADER = "wavemg-mesh v1"


class InvalidMeshError(ValueError):
    pass


class MeshParseError(InvalidMeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class SurfaceMesh1D:
    x_nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise InvalidMeshError("surface mesh needs at least two vertices")
        if np.any(np.diff(x) <= 0):
            raise InvalidMeshError("surface vertices must be strictly increasing")
        object.__setattr__(self, "x_nodes", x)

    @property
    def n_elements(self) -> int:
        return len(self.x_nodes) - 1


@dataclass(frozen=True, eq=False)
class Bathymetry:
    """Still-water depth h(x) > 0 and its slope.

    ``spec`` is the serialisable description used by case configs.
    """

    depth_fn: Callable
    slope_fn: Callable | None = None
    spec: dict = field(default_factory=dict)

    def depth(self, x):
        return np.asarray(self.depth_fn(np.asarray(x, dtype=float)), dtype=float)

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        if self.slope_fn is not None:
            return np.asarray(self.slope_fn(x), dtype=float)
        eps = 1e-6
        return (self.depth(x + eps) - self.depth(x - eps)) / (2 * eps)

    @classmethod
    def flat(cls, depth: float) -> "Bathymetry":
        if depth <= 0:
            raise InvalidMeshError(f"depth must be positive, got {depth}")
        return cls(
            lambda x: np.full_like(x, depth, dtype=float),
            lambda x: np.zeros_like(x, dtype=float),
            {"kind": "flat", "depth": float(depth)},
        )

    @classmethod
    def piecewise_linear(cls, xs, hs) -> "Bathymetry":
        """Linear interpolation between (xs, hs) breakpoints, constant outside."""
        xs = np.asarray(xs, dtype=float)
        hs = np.asarray(hs, dtype=float)
        if np.any(hs <= 0):
            raise InvalidMeshError("depth must be positive")
        slopes = np.diff(hs) / np.diff(xs)

        def slope(x):
            k = np.searchsorted(xs, x, side="right") - 1
            inside = (k >= 0) & (k < len(slopes))
            out = np.zeros_like(x, dtype=float)
            out[inside] = slopes[k[inside]]
            return out

        return cls(
            lambda x: np.interp(x, xs, hs),
            slope,
            {"kind": "piecewise_linear", "x": xs.tolist(), "h": hs.tolist()},
        )

    @classmethod
    def from_spec(cls, spec: dict) -> "Bathymetry":
        kind = spec.get("kind")
        if kind == "flat":
            return cls.flat(float(spec["depth"]))
        if kind == "piecewise_linear":
            return cls.piecewise_linear(spec["x"], spec["h"])
        raise InvalidMeshError(f"unknown bathymetry kind {kind!r}")


@dataclass(frozen=True, eq=False)
class LayeredMesh:
    surface: SurfaceMesh1D
    sigma_nodes: np.ndarray
    vertices: np.ndarray  # (n_vertices, 2) columns x, sigma
    quads: np.ndarray  # (n_elements, 4) counterclockwise vertex ids
    boundary: tuple  # ((v1, v2, tag), ...)

    @property
    def n_x(self) -> int:
        return self.surface.n_elements

    @property
    def n_sigma(self) -> int:
        return len(self.sigma_nodes) - 1

    @property
    def n_elements(self) -> int:
        return len(self.quads)

    def element_areas(self) -> np.ndarray:
        v = self.vertices[self.quads]
        x, s = v[..., 0], v[..., 1]
        return 0.5 * np.sum(x * np.roll(s, -1, axis=1) - np.roll(x, -1, axis=1) * s, axis=1)

    def __eq__(self, other):
        if not isinstance(other, LayeredMesh):
            return NotImplemented
        return (
            np.array_equal(self.surface.x_nodes, other.surface.x_nodes)
            and np.array_equal(self.sigma_nodes, other.sigma_nodes)
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.quads, other.quads)
            and sorted(self.boundary) == sorted(other.boundary)
        )

    __hash__ = None


def _structured(x_nodes, sigma_nodes) -> LayeredMesh:
    x_nodes = np.asarray(x_nodes, dtype=float)
    sigma_nodes = np.asarray(sigma_nodes, dtype=float)
    nx, ns = len(x_nodes) - 1, len(sigma_nodes) - 1
    xv, sv = np.meshgrid(x_nodes, sigma_nodes, indexing="ij")
    vertices = np.column_stack([xv.ravel(), sv.ravel()])

    def vid(i, j):
        return i * (ns + 1) + j

    i, j = np.meshgrid(np.arange(nx), np.arange(ns), indexing="ij")
    i, j = i.ravel(), j.ravel()
    quads = np.column_stack([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])

    boundary = []
    for a in range(nx):
        boundary.append((vid(a, 0), vid(a + 1, 0), BOTTOM))
        boundary.append((vid(a + 1, ns), vid(a, ns), FREE_SURFACE))
    for b in range(ns):
        boundary.append((vid(nx, b), vid(nx, b + 1), WALL_RIGHT))
        boundary.append((vid(0, b + 1), vid(0, b), WALL_LEFT))
    return LayeredMesh(SurfaceMesh1D(x_nodes), sigma_nodes, vertices, quads, tuple(boundary))


def build_structured(x_min, x_max, n_x, n_sigma, bathymetry: Bathymetry | None = None) -> LayeredMesh:
    """Uniform n_x by n_sigma quad mesh of [x_min, x_max] x [0, 1].

    `bathymetry` is only validated (h > 0 at the vertices); the mesh itself lives
    in (x, sigma) and does not depend on it.
    """
    if n_x < 1 or n_sigma < 1 or int(n_x) != n_x or int(n_sigma) != n_sigma:
        raise InvalidMeshError(f"element counts must be positive integers, got ({n_x}, {n_sigma})")
    if not x_min < x_max:
        raise InvalidMeshError(f"x_min must be < x_max, got ({x_min}, {x_max})")
    x_nodes = np.linspace(x_min, x_max, int(n_x) + 1)
    if bathymetry is not None and np.any(bathymetry.depth(x_nodes) <= 0):
        raise InvalidMeshError("bathymetry must be positive over the domain")
    return _structured(x_nodes, np.linspace(0.0, 1.0, int(n_sigma) + 1))


@dataclass(frozen=True, eq=False)
class DofMap:
    """Continuous nodal numbering for tensor LGL elements of order (px, ps).

    Global node ``g = ix * ns_nodes + iz`` where ``ix`` counts LGL nodes along x
    and ``iz`` along sigma, so each vertical column is contiguous.
    """

    mesh: LayeredMesh
    px: int
    ps: int
    basis_x: BasisSet
    basis_s: BasisSet
    elem_nodes: np.ndarray
    coords: np.ndarray
    boundary_nodes: dict

    @property
    def nx_nodes(self) -> int:
        return self.mesh.n_x * self.px + 1

    @property
    def ns_nodes(self) -> int:
        return self.mesh.n_sigma * self.ps + 1

    @property
    def n_dofs(self) -> int:
        return self.nx_nodes * self.ns_nodes

    @property
    def orders(self) -> tuple[int, int]:
        return (self.px, self.ps)

    @property
    def elem_dx(self) -> np.ndarray:
        return np.repeat(np.diff(self.mesh.surface.x_nodes), self.mesh.n_sigma)

    @property
    def elem_ds(self) -> np.ndarray:
        return np.tile(np.diff(self.mesh.sigma_nodes), self.mesh.n_x)

    @property
    def surface_nodes(self) -> np.ndarray:
        """Global ids of the sigma = 1 nodes ordered by x."""
        return np.arange(self.nx_nodes) * self.ns_nodes + (self.ns_nodes - 1)

    @property
    def surface_x(self) -> np.ndarray:
        return self.coords[self.surface_nodes, 0]

    @property
    def surface_elem_nodes(self) -> np.ndarray:
        """(n_x, px + 1) indices into surface fields."""
        return np.arange(self.mesh.n_x)[:, None] * self.px + np.arange(self.px + 1)[None, :]

    def element_of(self, i: int, j: int) -> int:
        return i * self.mesh.n_sigma + j


def _lerp(a, b, xi):
    return 0.5 * (1.0 - xi) * a + 0.5 * (1.0 + xi) * b


def build_dofmap(mesh: LayeredMesh, px: int, ps: int) -> DofMap:
    bx, bs = lgl_basis(px), lgl_basis(ps)
    nx, ns = mesh.n_x, mesh.n_sigma
    nxn, nsn = nx * px + 1, ns * ps + 1

    i, j = np.divmod(np.arange(nx * ns), ns)
    a, b = np.meshgrid(np.arange(px + 1), np.arange(ps + 1), indexing="ij")
    ix = i[:, None] * px + a.ravel()[None, :]
    iz = j[:, None] * ps + b.ravel()[None, :]
    elem_nodes = ix * nsn + iz

    xv, sv = mesh.surface.x_nodes, mesh.sigma_nodes
    xs = np.concatenate([_lerp(xv[k], xv[k + 1], bx.nodes[:-1]) for k in range(nx)] + [xv[-1:]])
    ss = np.concatenate([_lerp(sv[k], sv[k + 1], bs.nodes[:-1]) for k in range(ns)] + [sv[-1:]])
    gx, gs = np.meshgrid(xs, ss, indexing="ij")
    coords = np.column_stack([gx.ravel(), gs.ravel()])

    g = np.arange(nxn * nsn).reshape(nxn, nsn)
    boundary = {
        FREE_SURFACE: g[:, -1].copy(),
        BOTTOM: g[:, 0].copy(),
        WALL_LEFT: g[0, :].copy(),
        WALL_RIGHT: g[-1, :].copy(),
    }
    return DofMap(mesh, px, ps, bx, bs, elem_nodes, coords, boundary)


def surface_derivative(dofmap: DofMap, field: np.ndarray) -> np.ndarray:
    """d/dx of a C0 surface field, element derivatives averaged with lumped LGL mass."""
    en = dofmap.surface_elem_nodes
    dx = np.diff(dofmap.mesh.surface.x_nodes)
    d = dofmap.basis_x.diff_matrix
    local = (field[en] @ d.T) * (2.0 / dx)[:, None]
    mass = dofmap.basis_x.weights[None, :] * (0.5 * dx)[:, None]
    num = np.zeros(dofmap.nx_nodes)
    den = np.zeros(dofmap.nx_nodes)
    np.add.at(num, en, local * mass)
    np.add.at(den, en, mass)
    return num / den


def surface_integral(dofmap: DofMap, field: np.ndarray) -> float:
    en = dofmap.surface_elem_nodes
    dx = np.diff(dofmap.mesh.surface.x_nodes)
    return float(np.sum((field[en] @ dofmap.basis_x.weights) * 0.5 * dx))


def evaluate_surface(dofmap: DofMap, field: np.ndarray, x) -> np.ndarray:
    """Interpolate a surface field at abscissae `x` through the containing element."""
    xv = dofmap.mesh.surface.x_nodes
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = np.clip(np.searchsorted(xv, x, side="right") - 1, 0, len(xv) - 2)
    xi = np.clip(2.0 * (x - xv[k]) / (xv[k + 1] - xv[k]) - 1.0, -1.0, 1.0)
    out = np.empty(len(x))
    en = dofmap.surface_elem_nodes
    for n, (kk, xx) in enumerate(zip(k, xi)):
        out[n] = lagrange_matrix(dofmap.basis_x, [xx])[0] @ field[en[kk]]
    return out


# ---------------------------------------------------------------------------
# text IO


def write_mesh(mesh: LayeredMesh, path) -> None:
    lines = [MESH_HEADER, f"vertices {len(mesh.vertices)}"]
    lines += [f"{k} {x!r} {s!r}" for k, (x, s) in enumerate(mesh.vertices.tolist())]
    lines.append(f"quads {len(mesh.quads)}")
    lines += [" ".join(str(v) for v in q) for q in mesh.quads.tolist()]
    lines.append(f"boundary {len(mesh.boundary)}")
    lines += [f"{a} {b} {t}" for a, b, t in mesh.boundary]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_count(lines, pos, keyword):
    lineno, text = lines[pos]
    parts = text.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise MeshParseError(lineno, f"expected '{keyword} <count>', got {text!r}")
    try:
        n = int(parts[1])
    except ValueError:
        raise MeshParseError(lineno, f"bad {keyword} count {parts[1]!r}") from None
    if n < 0 or pos + n >= len(lines):
        raise MeshParseError(lineno, f"{keyword} count {n} exceeds file length")
    return n


def read_mesh(path) -> LayeredMesh:
    raw = Path(path).read_text().splitlines()
    lines = [(k + 1, t.strip()) for k, t in enumerate(raw) if t.strip() and not t.strip().startswith("#")]
    if not lines or lines[0][1] != MESH_HEADER:
        raise MeshParseError(lines[0][0] if lines else 1, f"missing header {MESH_HEADER!r}")
    pos = 1

    nv = _parse_count(lines, pos, "vertices")
    vertices = np.empty((nv, 2))
    for k in range(nv):
        lineno, text = lines[pos + 1 + k]
        parts = text.split()
        if len(parts) != 3:
            raise MeshParseError(lineno, f"vertex line needs 'id x sigma', got {text!r}")
        try:
            vid, x, s = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise MeshParseError(lineno, f"bad vertex field: {exc}") from None
        if vid != k:
            raise MeshParseError(lineno, f"vertex ids must be consecutive, expected {k} got {vid}")
        if not 0.0 <= s <= 1.0:
            raise InvalidMeshError(f"line {lineno}: sigma={s} outside [0, 1]")
        vertices[k] = x, s
    pos += 1 + nv

    nq = _parse_count(lines, pos, "quads")
    quads = np.empty((nq, 4), dtype=np.int64)
    for k in range(nq):
        lineno, text = lines[pos + 1 + k]
        try:
            q = [int(t) for t in text.split()]
        except ValueError as exc:
            raise MeshParseError(lineno, f"bad quad field: {exc}") from None
        if len(q) != 4 or min(q) < 0 or max(q) >= nv:
            raise MeshParseError(lineno, f"quad needs 4 vertex ids in [0, {nv}), got {text!r}")
        quads[k] = q
    pos += 1 + nq

    nb = _parse_count(lines, pos, "boundary")
    boundary = []
    for k in range(nb):
        lineno, text = lines[pos + 1 + k]
        parts = text.split()
        if len(parts) != 3:
            raise MeshParseError(lineno, f"boundary line needs 'v1 v2 TAG', got {text!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise MeshParseError(lineno, f"bad boundary vertex: {exc}") from None
        if parts[2] not in TAGS:
            raise MeshParseError(lineno, f"unknown boundary tag {parts[2]!r}")
        boundary.append((a, b, parts[2]))
    if pos + 1 + nb != len(lines):
        raise MeshParseError(lines[pos + 1 + nb][0], "trailing content after boundary section")

    return _validate(vertices, quads, boundary)


def _validate(vertices, quads, boundary) -> LayeredMesh:
    xs = np.unique(vertices[:, 0])
    ss = np.unique(vertices[:, 1])
    if len(xs) * len(ss) != len(vertices) or ss[0] != 0.0 or ss[-1] != 1.0:
        raise InvalidMeshError("vertices do not form a layered grid spanning sigma in [0, 1]")
    mesh = _structured(xs, ss)
    if not np.array_equal(mesh.vertices, vertices):
        raise InvalidMeshError("vertex numbering is not column-major layered order")
    if not np.array_equal(mesh.quads, quads):
        raise InvalidMeshError("quads do not match the layered structure")

    expected = {frozenset((a, b)): t for a, b, t in mesh.boundary}
    seen = {}
    for a, b, t in boundary:
        key = frozenset((a, b))
        if key not in expected:
            raise InvalidMeshError(f"edge ({a}, {b}) is not a boundary edge")
        if key in seen:
            raise InvalidMeshError(f"edge ({a}, {b}) tagged more than once")
        if expected[key] != t:
            raise InvalidMeshError(f"edge ({a}, {b}) tagged {t}, expected {expected[key]}")
        seen[key] = t
    missing = set(expected) - set(seen)
    if missing:
        a, b = sorted(next(iter(missing)))
        raise InvalidMeshError(f"{len(missing)} boundary edge(s) missing a tag, e.g. ({a}, {b})")
    return mesh


def discrete_anisotropy(mesh: LayeredMesh, dofmap: DofMap, bathymetry: Bathymetry) -> float:
    """Vertical element height at the deepest point over mean horizontal node spacing."""
    dz = float(np.max(bathymetry.depth(mesh.surface.x_nodes))) / mesh.n_sigma
    dx = (mesh.surface.x_nodes[-1] - mesh.surface.x_nodes[0]) / (dofmap.nx_nodes - 1)
    return dz / dx

