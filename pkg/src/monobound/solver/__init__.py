"""Grid solvers, boundary extraction and independent oracles."""

from .fields import CONTINUE, STOP, BoundaryEscapeError, BoundarySet, ValueField, extract_boundaries
from .grid import MODES, ConfigError, Grid2D, SolverConfig, build_grid
from .lcp import SolverError, policy_iteration, psor
from .montecarlo import MCEstimate, mc_value_oracle
from .oracle1d import Oracle1D, compare_with_oracle, solve_1d_constant_rho
from .solve import eps_D, solve_qd, solve_st, solve_st_timechanged

__all__ = [
    "CONTINUE", "STOP", "MODES", "BoundaryEscapeError", "BoundarySet", "ConfigError",
    "Grid2D", "MCEstimate", "Oracle1D", "SolverConfig", "SolverError", "ValueField", "build_grid",
    "compare_with_oracle", "eps_D", "extract_boundaries", "mc_value_oracle", "policy_iteration", "psor", "solve_1d_constant_rho",
    "solve_qd", "solve_st", "solve_st_timechanged",
]
