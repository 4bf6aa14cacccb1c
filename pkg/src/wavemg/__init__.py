"""2D sigma-coordinate FNPF wave model with a geometric p-multigrid Laplace solver."""

from .assembly import AssembledSystem, build_system, compute_metric, impose_boundary_conditions
from .basis import lgl_basis
from .cases import CasePreset, get_preset, preset_standing_wave, preset_submerged_bar, run_scaling_sweep
from .fnpf import LaplaceStageSolver, Simulation, UpdateStrategy
from .mesh import Bathymetry, build_dofmap, build_structured
from .multigrid import build_hierarchy, make_coarsening_plan, v_cycle
from .solvers import SolverConfig, solve, solve_direct, solve_mg, solve_pcg, solve_pdc

__version__ = "0.1.0"
