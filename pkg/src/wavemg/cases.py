"""Benchmark presets (submerged bar, standing wave) and the order/size scaling sweep."""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .assembly import impose_boundary_conditions
from .fnpf import (ConfigError, FnpfState, LaplaceStageSolver, RelaxationZone, Simulation, UpdateStrategy,
                   dispersion_omega, incident_wave)
from .mesh import Bathymetry, InvalidMeshError, LayeredMesh, build_dofmap, build_structured
from .multigrid import CoarseningPlan, InvalidPlanError, build_hierarchy, level_systems, make_coarsening_plan
from .solvers import SolverConfig, solve_mg, solve_pcg

CONFIG_VERSION = 1

# Beji & Battjes style bar: 1:20 up-slope from x = 6 m, crest 0.1 m deep on [12, 14],
# 1:10 down-slope back to 0.4 m at x = 17 m.
BAR_PROFILE = {"kind": "piecewise_linear", "x": [6.0, 12.0, 14.0, 17.0], "h": [0.4, 0.1, 0.1, 0.4]}
BAR_WAVE = {"height": 0.02, "period": 2.02, "depth": 0.4, "x0": 0.0, "ramp_periods": 2.0}


@dataclass
class MeshSpec:
    x_min: float
    x_max: float
    n_x: int
    n_sigma: int
    bathymetry: dict

    def build(self) -> tuple[LayeredMesh, Bathymetry]:
        bath = Bathymetry.from_spec(self.bathymetry)
        return build_structured(self.x_min, self.x_max, self.n_x, self.n_sigma, bath), bath


@dataclass
class CasePreset:
    name: str
    mesh: MeshSpec
    orders: tuple = (6, 6)
    plan: list | None = None  # explicit level table, finest first
    strategy: int = 3
    solver: SolverConfig = field(default_factory=SolverConfig)
    overlap_mode: str = "fixed"
    overlap: int = 1
    overlap_cap: int | None = None
    dt: float = 0.01
    t_end: float = 1.0
    gauges: list = field(default_factory=list)
    zones: list = field(default_factory=list)  # RelaxationZone fields as dicts
    initial: dict = field(default_factory=lambda: {"kind": "still"})
    linear: bool = False
    warm_start: bool = True
    freeze_operator: bool = True
    output: dict = field(default_factory=lambda: {"tolerances": [1e-4, 1e-5, 1e-6, 1e-7]})
    notes: str = ""

    # -- derived objects -------------------------------------------------

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def coarsening_plan(self) -> CoarseningPlan:
        return make_coarsening_plan(*self.orders, levels=self.plan)

    def build_mesh(self):
        return self.mesh.build()

    def relaxation_zones(self) -> list:
        return [RelaxationZone(**z) for z in self.zones]

    def initial_state(self, dofmap, g: float = 9.81) -> FnpfState:
        x = dofmap.surface_x
        kind = self.initial.get("kind", "still")
        if kind == "still":
            return FnpfState(0.0, np.zeros_like(x), np.zeros_like(x), g=g)
        if kind == "standing":
            k = 2 * np.pi / float(self.initial["wavelength"])
            a = 0.5 * float(self.initial["height"])
            return FnpfState(0.0, a * np.cos(k * (x - self.mesh.x_min)), np.zeros_like(x), g=g)
        raise ConfigError(f"initial.kind: unknown initial condition {kind!r}")

    def build_simulation(self, strategy=None, solver: SolverConfig | None = None) -> Simulation:
        mesh, bath = self.build_mesh()
        plan = self.coarsening_plan()
        dm = build_dofmap(mesh, *plan.finest)
        state = self.initial_state(dm)
        stage = LaplaceStageSolver(
            mesh, bath, plan, strategy=self.strategy if strategy is None else strategy,
            config=solver or self.solver, linear=self.linear, overlap_mode=self.overlap_mode,
            overlap=self.overlap, overlap_cap=self.overlap_cap, eta0=state.eta, warm_start=self.warm_start,
            freeze_operator=self.freeze_operator,
        )
        return Simulation(stage, state, self.dt, self.relaxation_zones(), list(self.gauges), self.linear)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["orders"] = list(self.orders)
        d["plan"] = None if self.plan is None else [list(p) for p in self.plan]
        return {"version": CONFIG_VERSION, **d}

    @classmethod
    def from_dict(cls, data: dict) -> "CasePreset":
        data = copy.deepcopy(dict(data))
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"version: unsupported config version {version!r}")
        _reject_unknown(data, cls, "")
        if "name" not in data or "mesh" not in data:
            raise ConfigError("name/mesh: both keys are required")
        if not isinstance(data["mesh"], dict):
            raise ConfigError("mesh: expected a mapping")
        _reject_unknown(data["mesh"], MeshSpec, "mesh.")
        try:
            data["mesh"] = MeshSpec(**data["mesh"])
        except TypeError as exc:
            raise ConfigError(f"mesh: {exc}") from None
        if "solver" in data:
            if not isinstance(data["solver"], dict):
                raise ConfigError("solver: expected a mapping")
            _reject_unknown(data["solver"], SolverConfig, "solver.")
            try:
                data["solver"] = SolverConfig(**data["solver"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"solver: {exc}") from None
        if "orders" in data:
            data["orders"] = tuple(int(p) for p in data["orders"])
        if data.get("plan") is not None:
            data["plan"] = [tuple(int(p) for p in lv) for lv in data["plan"]]
        for zone in data.get("zones", []):
            _reject_unknown(zone, RelaxationZone, "zones[].")
        preset = cls(**data)
        preset.validate()
        return preset

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "CasePreset":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a mapping")
        return cls.from_dict(data)

    def validate(self) -> None:
        checks = [
            ("dt", self.dt > 0), ("t_end", self.t_end >= 0), ("overlap", self.overlap >= 0),
            ("overlap_mode", self.overlap_mode in ("fixed", "refined")),
            ("orders", len(self.orders) == 2 and min(self.orders) >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"{key}: invalid value {getattr(self, key)!r}")
        try:
            self.strategy = int(UpdateStrategy.parse(self.strategy))
        except ConfigError as exc:
            raise ConfigError(f"strategy: {exc}") from None
        try:
            self.coarsening_plan()
            self.build_mesh()
        except (InvalidPlanError, InvalidMeshError, KeyError, TypeError, ValueError) as exc:
            key = "plan" if isinstance(exc, InvalidPlanError) else "mesh"
            raise ConfigError(f"{key}: {exc}") from None


def _reject_unknown(data: dict, cls, prefix: str) -> None:
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}: unknown key")


# ---------------------------------------------------------------------------
# presets


def preset_submerged_bar() -> CasePreset:
    """Harmonic generation over a submerged bar, 2D sigma model."""
    wave = {"kind": "linear_monochromatic", "params": dict(BAR_WAVE)}
    return CasePreset(
        name="bar2d",
        mesh=MeshSpec(0.0, 29.0, 103, 1, dict(BAR_PROFILE)),
        orders=(6, 6),
        plan=[(6, 6), (3, 3), (1, 1)],
        strategy=3,
        solver=SolverConfig(method="pcg", rtol=1e-7, atol=0.0, i_max=100, nu1=3, nu2=3),
        dt=0.0736,
        t_end=82.8,
        gauges=[4.0, 14.5, 17.3, 21.0],
        zones=[
            {"x_start": 0.0, "x_end": 3.5, "outer_end": "left", "wave": wave},
            {"x_start": 25.0, "x_end": 29.0, "outer_end": "right", "wave": None},
        ],
        notes="bar geometry and incident wave (H = 0.02 m, T = 2.02 s) follow the Beji-Battjes experiment",
    )


def preset_standing_wave(variant: str = "nonlinear", periods: float = 10.0, steps_per_period: int = 40,
                         n_x: int = 8, n_sigma: int = 2, orders=(6, 6)) -> CasePreset:
    """Closed tank one wavelength long, L = 2 m, kh = 2 pi (so h = 2 m)."""
    if variant not in ("linear", "nonlinear", "still"):
        raise ConfigError(f"variant: unknown standing-wave variant {variant!r}")
    wavelength, depth = 2.0, 2.0
    k = 2 * np.pi / wavelength
    period = 2 * np.pi / dispersion_omega(k, depth)
    height = {"linear": 0.01, "nonlinear": 0.089, "still": 0.0}[variant]
    dt = period / steps_per_period
    return CasePreset(
        name=f"standing_{variant}",
        mesh=MeshSpec(0.0, wavelength, n_x, n_sigma, {"kind": "flat", "depth": depth}),
        orders=tuple(orders),
        plan=None,
        strategy=3,
        solver=SolverConfig(method="pcg", rtol=1e-10, atol=1e-14, i_max=100, nu1=3, nu2=3),
        dt=dt,
        t_end=periods * steps_per_period * dt,
        gauges=[0.0, 0.5, 1.0],
        zones=[],
        initial={"kind": "still"} if variant == "still" else
                {"kind": "standing", "height": height, "wavelength": wavelength},
        linear=variant == "linear",
        output={"tolerances": [1e-10]},
    )


def solve_problem(preset: CasePreset, strategy=None):
    """Steady Laplace problem of a preset for single-solve benchmarks.

    Surface data come from the initial state when it is not at rest, otherwise
    from the first zone's incident wave (without ramp) spread over the whole
    surface. Returns (system with boundary data, hierarchy, eta, phi_tilde).
    """
    mesh, bath = preset.build_mesh()
    plan = preset.coarsening_plan()
    dm = build_dofmap(mesh, *plan.finest)
    x = dm.surface_x
    state = preset.initial_state(dm)
    eta = state.eta
    if preset.initial.get("kind") == "standing":
        k = 2 * np.pi / float(preset.initial["wavelength"])
        omega = dispersion_omega(k, float(bath.depth(x).mean()))
        phi = 0.5 * float(preset.initial["height"]) * 9.81 / omega * np.cos(k * (x - preset.mesh.x_min))
    else:
        waves = [z["wave"] for z in preset.zones if z.get("wave")]
        if waves:
            params = dict(waves[0]["params"], ramp_periods=0.0)
            eta, phi = incident_wave(waves[0]["kind"], params, 0.0, x)
        else:
            phi = np.zeros_like(x)
    strategy = UpdateStrategy.parse(preset.strategy if strategy is None else strategy)
    eta_op = None if preset.linear else eta
    coarse = "linear" if strategy == UpdateStrategy.II_linear_coarse else "same"
    systems = level_systems(mesh, bath, plan, eta_op, coarse)
    s = preset.solver
    h = build_hierarchy(systems, s.nu1, s.nu2, overlap=preset.overlap, overlap_mode=preset.overlap_mode,
                        overlap_cap=preset.overlap_cap)
    return impose_boundary_conditions(h.fine.system, phi), h, eta, phi


PRESETS = {
    "bar2d": preset_submerged_bar,
    "standing_linear": lambda: preset_standing_wave("linear"),
    "standing_nonlinear": lambda: preset_standing_wave("nonlinear"),
    "standing_still": lambda: preset_standing_wave("still"),
}


def get_preset(name: str) -> CasePreset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"case: unknown preset {name!r}, expected one of {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# scaling sweep


@dataclass
class ScalingConfig:
    """Size series on (0, x_length) x (-depth, 0) with elements 3x wider than tall."""

    x_length: float = 8.0
    depth: float = 2.0
    height: float = 0.089
    wavelength: float = 2.0
    rtol: float = 1e-8
    nu1: int = 3
    nu2: int = 3
    overlap: int = 1
    overlap_cap: int | None = None
    q_iterations: tuple = (2, 6)
    repeats: int = 3


def scaling_mesh(scale: int, config: ScalingConfig) -> tuple[LayeredMesh, Bathymetry]:
    """n_x = 4 s, n_sigma = 3 s elements, i.e. horizontal/vertical element size ratio 3 at x_length = 4 depth."""
    bath = Bathymetry.flat(config.depth)
    return build_structured(0.0, config.x_length, 4 * scale, 3 * scale, bath), bath


def scaling_problem(mesh, bath, orders, config: ScalingConfig, overlap_mode: str):
    """Steady Laplace problem: nonlinear metric of a standing-wave crest, matching surface potential."""
    plan = make_coarsening_plan(*orders)
    dm = build_dofmap(mesh, *orders)
    k = 2 * np.pi / config.wavelength
    x = dm.surface_x
    eta = 0.5 * config.height * np.cos(k * x)
    omega = dispersion_omega(k, config.depth)
    phi_tilde = 0.5 * config.height * 9.81 / omega * np.sin(k * x)
    systems = level_systems(mesh, bath, plan, eta)
    h = build_hierarchy(systems, config.nu1, config.nu2, overlap=config.overlap, overlap_mode=overlap_mode,
                        overlap_cap=config.overlap_cap)
    system = impose_boundary_conditions(h.fine.system, phi_tilde)
    return system, h


def measure_q(system, hierarchy, config: ScalingConfig, seed: int = 0) -> float:
    """Asymptotic V-cycle contraction: geometric mean of stand-alone MG residual ratios.

    Runs on the homogeneous problem (f = 0) from a seeded random initial guess,
    so the rate does not depend on how smooth the data happen to be.
    """
    lo, hi = config.q_iterations
    u0 = np.random.default_rng(seed).standard_normal(system.n)
    u0[system.dirichlet_nodes] = 0.0
    homogeneous = replace(system, b=np.zeros(system.n))
    _, rep = solve_mg(homogeneous, hierarchy, SolverConfig("mg", rtol=1.0, atol=1e-300, i_max=hi,
                                                           nu1=config.nu1, nu2=config.nu2), u0)
    q = np.asarray(rep.q[lo - 1:hi], dtype=float)
    q = q[q > 0]
    return float(np.exp(np.mean(np.log(q)))) if len(q) else float("nan")


def run_scaling_sweep(scales, orders_list, config: ScalingConfig | None = None,
                      overlap_modes=("fixed", "refined")) -> list[dict]:
    """One steady solve per (scale, orders, overlap mode); returns rows of dof, seconds, q, ..."""
    config = config or ScalingConfig()
    rows = []
    for orders in orders_list:
        orders = tuple(int(p) for p in orders)
        for scale in scales:
            mesh, bath = scaling_mesh(int(scale), config)
            for mode in overlap_modes:
                system, h = scaling_problem(mesh, bath, orders, config, mode)
                pcg = SolverConfig("pcg", rtol=config.rtol, nu1=config.nu1, nu2=config.nu2)
                times = []
                for _ in range(max(1, config.repeats)):
                    t0 = time.perf_counter()
                    _, rep = solve_pcg(system, h, pcg)
                    times.append(time.perf_counter() - t0)
                rows.append({
                    "dof": system.n, "seconds": float(min(times)), "q": measure_q(system, h, config),
                    "P_x": orders[0], "P_sigma": orders[1], "n_elements": mesh.n_elements,
                    "overlap_mode": mode, "iterations": rep.iterations,
                })
    return rows


def loglog_slope(dof, seconds) -> float:
    """Least-squares slope of log(seconds) against log(dof)."""
    return float(np.polyfit(np.log(np.asarray(dof, float)), np.log(np.asarray(seconds, float)), 1)[0])
