"""Outer iterations (MG, PDC, PCG), the direct baseline, and solver instrumentation."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .direct import CholeskyFactor
from .multigrid import MGHierarchy, v_cycle

METHODS = ("mg", "pdc", "pcg", "direct")


class BreakdownError(ArithmeticError):
    """p^T A p <= 0 inside PCG."""


@dataclass
class SolverConfig:
    method: str = "pcg"
    rtol: float = 1e-7
    atol: float = 0.0
    i_max: int = 100
    nu1: int = 3
    nu2: int = 3

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.rtol < 0 or self.atol < 0 or self.rtol + self.atol <= 0:
            raise ValueError("need rtol >= 0, atol >= 0 and rtol + atol > 0")
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ValueError("smoothing counts must be >= 0")


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    q: list = field(default_factory=list)
    converged: bool = False
    work_units: float = float("nan")
    wall_time: float = 0.0
    tolerance: float = 0.0
    f_norm: float = 0.0

    def finish(self, t0: float) -> "SolveReport":
        self.wall_time = time.perf_counter() - t0
        self.q = convergence_rates(self.residuals)
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @property
    def mean_q(self) -> float:
        q = [v for v in self.q if v > 0]
        return float(np.exp(np.mean(np.log(q)))) if q else float("nan")


def convergence_rates(residuals) -> list:
    r = np.asarray(residuals, dtype=float)
    if len(r) < 2:
        return []
    with np.errstate(divide="ignore", invalid="ignore"):
        return (r[1:] / r[:-1]).tolist()


def stop_threshold(f, config: SolverConfig) -> float:
    return config.rtol * float(np.linalg.norm(f)) + config.atol


def first_converged(residuals, threshold) -> int | None:
    """Index of the first residual at or below threshold (None if never)."""
    for m, r in enumerate(residuals):
        if r <= threshold:
            return m
    return None


def _keep_going(rnorm, threshold, i, config) -> bool:
    return i < config.i_max and np.isfinite(rnorm) and rnorm > threshold


def solve_mg(system, hierarchy: MGHierarchy, config: SolverConfig, u0=None):
    """Stand-alone V-cycle iteration to tolerance."""
    t0 = time.perf_counter()
    A, f = system.A, system.b
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=float)
    tol = stop_threshold(f, config)
    rep = SolveReport("mg", tolerance=tol, f_norm=float(np.linalg.norm(f)))
    rnorm = float(np.linalg.norm(f - A @ u))
    rep.residuals.append(rnorm)
    i = 0
    while _keep_going(rnorm, tol, i, config):
        u = v_cycle(0, u, f, hierarchy)
        rnorm = float(np.linalg.norm(f - A @ u))
        rep.residuals.append(rnorm)
        i += 1
    rep.iterations = i
    rep.converged = bool(np.isfinite(rnorm) and rnorm <= tol)
    return u, rep.finish(t0)


def solve_pdc(system, hierarchy: MGHierarchy, config: SolverConfig, u0=None):
    """Defect correction u <- u - delta with delta one V-cycle on -r from zero."""
    t0 = time.perf_counter()
    A, f = system.A, system.b
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=float)
    tol = stop_threshold(f, config)
    rep = SolveReport("pdc", tolerance=tol, f_norm=float(np.linalg.norm(f)))
    r = f - A @ u
    rnorm = float(np.linalg.norm(r))
    rep.residuals.append(rnorm)
    i = 0
    while _keep_going(rnorm, tol, i, config):
        delta = v_cycle(0, np.zeros_like(r), -r, hierarchy)
        u = u - delta
        r = f - A @ u
        rnorm = float(np.linalg.norm(r))
        rep.residuals.append(rnorm)
        i += 1
    rep.iterations = i
    rep.converged = bool(np.isfinite(rnorm) and rnorm <= tol)
    return u, rep.finish(t0)


def solve_pcg(system, hierarchy: MGHierarchy | None, config: SolverConfig, u0=None, track_error=None):
    """Conjugate gradients preconditioned by one V-cycle (identity if hierarchy is None).

    `track_error`, when given an exact solution, records the A-norm error per
    iteration in the returned report's ``a_errors`` attribute.
    """
    t0 = time.perf_counter()
    A, f = system.A, system.b
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=float)

    def precond(r):
        return r.copy() if hierarchy is None else v_cycle(0, np.zeros_like(r), r, hierarchy)

    tol = stop_threshold(f, config)
    rep = SolveReport("pcg", tolerance=tol, f_norm=float(np.linalg.norm(f)))
    a_errors = []
    r = f - A @ u
    rnorm = float(np.linalg.norm(r))
    rep.residuals.append(rnorm)
    if track_error is not None:
        e = track_error - u
        a_errors.append(float(np.sqrt(max(e @ (A @ e), 0.0))))
    i = 0
    if rnorm > tol:
        p = precond(r)
        delta = float(p @ r)
    while _keep_going(rnorm, tol, i, config):
        q = A @ p
        pq = float(p @ q)
        if not pq > 0:
            raise BreakdownError(f"p^T A p = {pq:.3e} at iteration {i}")
        alpha = delta / pq
        u = u + alpha * p
        r = r - alpha * q
        rnorm = float(np.linalg.norm(r))
        rep.residuals.append(rnorm)
        if track_error is not None:
            e = track_error - u
            a_errors.append(float(np.sqrt(max(e @ (A @ e), 0.0))))
        i += 1
        if not _keep_going(rnorm, tol, i, config):
            break
        z = precond(r)
        zr = float(z @ r)
        beta = zr / delta
        p = z + beta * p
        delta = zr
    rep.iterations = i
    rep.converged = bool(np.isfinite(rnorm) and rnorm <= tol)
    rep.finish(t0)
    if track_error is not None:
        rep.a_errors = a_errors
    return u, rep


def solve_direct(system):
    """RCM-ordered sparse Cholesky; returns (u, report) with one 'iteration'."""
    t0 = time.perf_counter()
    A, f = system.A, system.b
    u = CholeskyFactor(A).solve(f)
    rep = SolveReport("direct", iterations=1, converged=True, f_norm=float(np.linalg.norm(f)))
    rep.residuals = [float(np.linalg.norm(f)), float(np.linalg.norm(f - A @ u))]
    return u, rep.finish(t0)


SOLVERS = {"mg": solve_mg, "pdc": solve_pdc, "pcg": solve_pcg}


def solve(system, hierarchy, config: SolverConfig, u0=None):
    if config.method == "direct":
        return solve_direct(system)
    return SOLVERS[config.method](system, hierarchy, config, u0)


def time_spmv(A, repeats: int = 20) -> float:
    """Median wall time of one fine-grid sparse matrix-vector product."""
    x = np.random.default_rng(0).standard_normal(A.shape[1])
    A @ x
    times = []
    for _ in range(max(20, repeats)):
        t0 = time.perf_counter()
        A @ x
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def work_units(report: SolveReport, system, spmv_time: float | None = None) -> float:
    """Wall time of the solve expressed in fine-grid SpMV applications."""
    t = time_spmv(system.A) if spmv_time is None else spmv_time
    report.work_units = report.wall_time / t
    return report.work_units
