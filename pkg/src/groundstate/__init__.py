"""Ground states, criticality and Green functions for ``Q(u) = int |u'|^p + V |u|^p`` on radial grids."""

from .criticality import (
    DEGENERATELY_POSITIVE,
    INCONCLUSIVE,
    NONPOSITIVE,
    STRICTLY_POSITIVE,
    Thresholds,
    Verdict,
    classify,
    compute_cB,
    extract_ground_state,
)
from .eigensolve import SolveOptions, principal_eigen, solve_dirichlet, weighted_eigen
from .errors import PreconditionError, SolverError
from .functional import OperatorSpec, Problem, energy_Q, picone_terms
from .green import criticality_via_green, fit_singularity, green_function, minimal_growth_compare
from .grid import Exhaustion, Field, GridPolicy, RadialGrid, make_geometric_grid, make_grid

__all__ = [
    "DEGENERATELY_POSITIVE",
    "INCONCLUSIVE",
    "NONPOSITIVE",
    "STRICTLY_POSITIVE",
    "Exhaustion",
    "Field",
    "GridPolicy",
    "OperatorSpec",
    "PreconditionError",
    "Problem",
    "RadialGrid",
    "SolveOptions",
    "SolverError",
    "Thresholds",
    "Verdict",
    "classify",
    "compute_cB",
    "criticality_via_green",
    "energy_Q",
    "extract_ground_state",
    "fit_singularity",
    "green_function",
    "make_geometric_grid",
    "make_grid",
    "minimal_growth_compare",
    "picone_terms",
    "principal_eigen",
    "solve_dirichlet",
    "weighted_eigen",
]
