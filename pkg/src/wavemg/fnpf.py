"""Free-surface time stepping closed by the multigrid Laplace solve."""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .assembly import DepthCollapseError, build_system, impose_boundary_conditions, vertical_velocity
from .assembly import surface_interpolate
from .mesh import Bathymetry, DofMap, LayeredMesh, evaluate_surface, surface_derivative, surface_integral
from .multigrid import CoarseningPlan, MGHierarchy, build_hierarchy, level_systems
from .solvers import SolverConfig, solve

G = 9.81


class ConfigError(ValueError):
    pass


class UpdateStrategy(enum.IntEnum):
    I_frozen_t0 = 1
    II_linear_coarse = 2
    III_full_nonlinear = 3

    @classmethod
    def parse(cls, value) -> "UpdateStrategy":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            v = value.strip().upper()
            roman = {"I": 1, "II": 2, "III": 3}
            if v in roman:
                return cls(roman[v])
            if v.isdigit():
                return cls(int(v))
            for member in cls:
                if member.name.upper() == v:
                    return member
            raise ConfigError(f"unknown update strategy {value!r}")
        try:
            return cls(int(value))
        except ValueError:
            raise ConfigError(f"unknown update strategy {value!r}") from None


@dataclass
class FnpfState:
    t: float
    eta: np.ndarray
    phi_tilde: np.ndarray
    w_tilde: np.ndarray | None = None
    g: float = G

    def check(self, bathymetry: Bathymetry, dofmap: DofMap) -> None:
        if not (np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.phi_tilde))):
            raise FloatingPointError(f"non-finite surface fields at t = {self.t:.4f}")
        if np.any(bathymetry.depth(dofmap.surface_x) + self.eta <= 0):
            raise DepthCollapseError(f"wave trough reached the bed at t = {self.t:.4f}")


# ---------------------------------------------------------------------------
# dispersion and incident waves


def dispersion_omega(k: float, h: float, g: float = G) -> float:
    return float(np.sqrt(g * k * np.tanh(k * h)))


@functools.lru_cache(maxsize=256)
def dispersion_k(omega: float, h: float, g: float = G) -> float:
    """Wavenumber solving omega^2 = g k tanh(k h)."""
    if omega <= 0:
        raise ConfigError("angular frequency must be positive")
    deep = omega**2 / g
    hi = max(deep, omega / np.sqrt(g * h)) * 2.0 + 1.0
    return float(brentq(lambda k: g * k * np.tanh(k * h) - omega**2, 1e-12, hi, xtol=1e-15))


@dataclass(frozen=True)
class LinearWave:
    height: float
    period: float
    depth: float
    x0: float = 0.0
    ramp_periods: float = 0.0
    g: float = G

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.period

    @property
    def k(self) -> float:
        return dispersion_k(self.omega, self.depth, self.g)

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.k

    def fields(self, t, x):
        x = np.asarray(x, dtype=float)
        a = 0.5 * self.height
        if self.ramp_periods > 0:
            s = min(t / (self.ramp_periods * self.period), 1.0)
            a *= 0.5 * (1 - np.cos(np.pi * s))
        theta = self.k * (x - self.x0) - self.omega * t
        eta = a * np.cos(theta)
        phi = a * self.g / self.omega * np.sin(theta)
        return eta, phi


INCIDENT_KINDS = ("linear_monochromatic",)


def incident_wave(kind: str, params: dict, t: float, x):
    """Target (eta, phi_tilde) of an incident wave at time t on abscissae x."""
    if kind != "linear_monochromatic":
        raise ConfigError(f"unsupported incident wave kind {kind!r}")
    try:
        wave = LinearWave(**params)
    except TypeError as exc:
        raise ConfigError(f"bad incident wave parameters: {exc}") from None
    if wave.height == 0:
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x), np.zeros_like(x)
    return wave.fields(t, x)


# ---------------------------------------------------------------------------
# relaxation zones


@dataclass(frozen=True)
class RelaxationZone:
    """Blend u <- gamma u + (1 - gamma) u_target on [x_start, x_end].

    gamma = 1 - (1 - xi)^3 with xi the normalised distance from the outer
    (generation/absorption) end, so gamma = 0 there and 1 at the interface.
    A zone without a wave relaxes toward still water.
    """

    x_start: float
    x_end: float
    outer_end: str = "left"
    wave: dict | None = None  # {"kind": ..., "params": {...}}

    def gamma(self, x):
        x = np.asarray(x, dtype=float)
        length = self.x_end - self.x_start
        if self.outer_end == "left":
            xi = (x - self.x_start) / length
        else:
            xi = (self.x_end - x) / length
        xi = np.clip(xi, 0.0, 1.0)
        g = 1.0 - (1.0 - xi) ** 3
        inside = (x >= self.x_start) & (x <= self.x_end)
        return np.where(inside, g, 1.0)

    def target(self, t, x):
        if self.wave is None:
            z = np.zeros_like(np.asarray(x, dtype=float))
            return z, z
        return incident_wave(self.wave["kind"], self.wave["params"], t, x)


def apply_relaxation(state: FnpfState, zones, x_surface) -> FnpfState:
    eta, phi = state.eta.copy(), state.phi_tilde.copy()
    for zone in zones:
        gam = zone.gamma(x_surface)
        mask = gam < 1.0
        if not np.any(mask):
            continue
        te, tp = zone.target(state.t, x_surface[mask])
        eta[mask] = gam[mask] * eta[mask] + (1 - gam[mask]) * te
        phi[mask] = gam[mask] * phi[mask] + (1 - gam[mask]) * tp
    return replace(state, eta=eta, phi_tilde=phi)


# ---------------------------------------------------------------------------
# free-surface right-hand side and time stepping


def surface_rhs(dofmap: DofMap, eta, phi_tilde, w_tilde, linear: bool = False, g: float = G):
    """Kinematic and dynamic free-surface conditions (Zakharov form)."""
    if linear:
        return np.array(w_tilde, dtype=float), -g * np.asarray(eta, dtype=float)
    eta_x = surface_derivative(dofmap, eta)
    phi_x = surface_derivative(dofmap, phi_tilde)
    slope2 = 1.0 + eta_x * eta_x
    deta = -eta_x * phi_x + w_tilde * slope2
    dphi = -g * eta - 0.5 * (phi_x * phi_x - w_tilde * w_tilde * slope2)
    return deta, dphi


def rk4(y, t, dt, f):
    """Classical four-stage Runge-Kutta step for tuples of arrays (or scalars)."""

    def axpy(a, k):
        return tuple(yi + a * ki for yi, ki in zip(y, k))

    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, axpy(0.5 * dt, k1))
    k3 = f(t + 0.5 * dt, axpy(0.5 * dt, k2))
    k4 = f(t + dt, axpy(dt, k3))
    return tuple(yi + dt / 6.0 * (a + 2 * b + 2 * c + d) for yi, a, b, c, d in zip(y, k1, k2, k3, k4))


@dataclass
class SolveRecord:
    t: float
    iterations: int
    residuals: list
    q: float
    wall_time: float
    converged: bool
    f_norm: float = 0.0


class LaplaceStageSolver:
    """Closure that maps surface fields (eta, phi_tilde) to w_tilde.

    Owns the multigrid hierarchy and keeps it in step with the free surface
    according to the update strategy. Every call is logged in ``records``.
    Under strategy I the solved fine operator is frozen as well unless
    ``freeze_operator`` is False, in which case only the preconditioner is.
    """

    def __init__(self, mesh: LayeredMesh, bathymetry: Bathymetry, plan: CoarseningPlan,
                 strategy=UpdateStrategy.III_full_nonlinear, config: SolverConfig | None = None,
                 linear: bool = False, overlap_mode: str = "fixed", overlap: int = 1,
                 overlap_cap: int | None = None, eta0=None, warm_start: bool = False,
                 symmetric: bool = False, quadrature: str = "lgl", freeze_operator: bool = True):
        self.mesh = mesh
        self.bathymetry = bathymetry
        self.plan = plan
        self.strategy = UpdateStrategy.parse(strategy)
        self.config = config or SolverConfig()
        self.linear = linear
        self.warm_start = warm_start
        self.quadrature = quadrature
        self.freeze_operator = freeze_operator
        self.records: list[SolveRecord] = []
        self._last = None
        self.last_phi = None
        self.t = 0.0

        eta_init = None if (linear or eta0 is None) else np.asarray(eta0, dtype=float)
        coarse_eta = "linear" if self.strategy == UpdateStrategy.II_linear_coarse else "same"
        systems = level_systems(mesh, bathymetry, plan, eta_init, coarse_eta, quadrature)
        self.dofmap = systems[0].dofmap
        self.hierarchy: MGHierarchy = build_hierarchy(
            systems, self.config.nu1, self.config.nu2, overlap=overlap, overlap_mode=overlap_mode,
            overlap_cap=overlap_cap, symmetric=symmetric,
        )
        self.system = self.hierarchy.fine.system

    def update_operators(self, eta) -> None:
        update_operators(self.strategy, eta, self)

    def __call__(self, eta, phi_tilde, t: float | None = None):
        if t is not None:
            self.t = t
        base = self.hierarchy.fine.system
        if not self.linear:
            self.update_operators(eta)
            base = self.hierarchy.fine.system
            if self.strategy == UpdateStrategy.I_frozen_t0 and not self.freeze_operator:
                # only the preconditioner stays at t = 0; the solved system follows eta
                base = build_system(self.dofmap, self.bathymetry, eta, self.quadrature)
        system = impose_boundary_conditions(base, phi_tilde)
        self.system = system
        u0 = self._last if (self.warm_start and self._last is not None) else None
        phi, rep = solve(system, self.hierarchy, self.config, u0)
        self._last = phi
        self.last_phi = phi
        self.records.append(SolveRecord(self.t, rep.iterations, rep.residuals, rep.mean_q, rep.wall_time,
                                        rep.converged, rep.f_norm))
        return vertical_velocity(phi, system.metric, self.dofmap)

    def kinetic_energy(self) -> float:
        phi = self.last_phi
        return 0.5 * float(phi @ (self.system.A_neumann @ phi))


def update_operators(strategy, eta, stage: LaplaceStageSolver) -> MGHierarchy:
    """Bring the hierarchy in line with the current free surface.

    I keeps the t = 0 operators; II rebuilds the finest level only (coarse levels
    hold the still-water metric); III rebuilds every level from eta.
    """
    strategy = UpdateStrategy.parse(strategy)
    h = stage.hierarchy
    if strategy == UpdateStrategy.I_frozen_t0:
        return h
    n_levels = 1 if strategy == UpdateStrategy.II_linear_coarse else len(h.levels)
    fine_dm = h.levels[0].dofmap
    for k in range(n_levels):
        dm = h.levels[k].dofmap
        e = surface_interpolate(np.asarray(eta, dtype=float), fine_dm, dm)
        h.set_system(k, build_system(dm, stage.bathymetry, e, stage.quadrature))
    return h


def erk4_step(state: FnpfState, dt: float, laplace, dofmap: DofMap, linear: bool = False) -> FnpfState:
    """One ERK4 step; `laplace(eta, phi, t)` returns w_tilde (one Laplace solve per stage)."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def f(t, y):
        eta, phi = y
        w = laplace(eta, phi, t)
        return surface_rhs(dofmap, eta, phi, w, linear, state.g)

    eta, phi = rk4((state.eta, state.phi_tilde), state.t, dt, f)
    return FnpfState(state.t + dt, eta, phi, None, state.g)


@dataclass
class Simulation:
    """Time-domain driver: ERK4 stages, relaxation, post-step solve, diagnostics."""

    stage: LaplaceStageSolver
    state: FnpfState
    dt: float
    zones: list = field(default_factory=list)
    gauges: list = field(default_factory=list)
    linear: bool = False
    history: dict = field(default_factory=lambda: {"t": [], "gauges": [], "mass": [], "energy": []})

    def __post_init__(self):
        self.dofmap = self.stage.dofmap
        self.x = self.dofmap.surface_x
        self.state = apply_relaxation(self.state, self.zones, self.x)
        self._refresh()

    def _refresh(self):
        s = self.state
        s.w_tilde = self.stage(s.eta, s.phi_tilde, s.t)
        h = self.history
        h["t"].append(s.t)
        h["gauges"].append(evaluate_surface(self.dofmap, s.eta, self.gauges) if self.gauges else np.zeros(0))
        h["mass"].append(surface_integral(self.dofmap, s.eta))
        h["energy"].append(self.energy())

    def energy(self) -> float:
        s = self.state
        return 0.5 * s.g * surface_integral(self.dofmap, s.eta**2) + self.stage.kinetic_energy()

    def step(self) -> FnpfState:
        new = erk4_step(self.state, self.dt, self.stage, self.dofmap, self.linear)
        new = apply_relaxation(new, self.zones, self.x)
        new.check(self.stage.bathymetry, self.dofmap)
        self.state = new
        self._refresh()
        return new

    def run(self, n_steps: int, callback=None):
        for n in range(n_steps):
            self.step()
            if callback is not None:
                callback(n + 1, self)
        return self.state
