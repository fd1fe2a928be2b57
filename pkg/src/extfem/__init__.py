"""Unfitted finite elements by direct extension.

A background simplicial mesh is laid over the geometry described by a
level set; unknowns live only on elements fully inside each subdomain,
cut elements borrow their neighbours' polynomials, and boundary/jump
conditions are imposed weakly (Nitsche / interior penalty).
"""

from .mesh import SimplexMesh, build_structured_mesh, read_mesh_text, write_mesh_text
from .geometry import (
    LevelSet,
    Mode,
    Tag,
    DomainClassification,
    AssumptionViolation,
    EmptyDomainError,
    classify,
    assign_hosts,
    verify_assumptions,
)
from .cutquad import (
    QuadRule,
    Side,
    reference_simplex_rule,
    cut_volume_rule,
    cut_surface_rule,
    cut_face_rule,
)
from .xspace import ExtendedSpace, LagrangeBasis, build_space
from .assembly import (
    ModelProblem,
    SparseSystem,
    assemble_boundary,
    assemble_interface,
    galerkin_residual,
    local_cell_matrix,
    local_face_matrix,
    local_interface_matrix,
)
from .linalg import estimate_cond, read_matrix_market, solve_cg, solve_direct_dense
from .study import (
    ConvergenceRow,
    ExperimentConfig,
    builtin_problem,
    energy_error,
    fitted_order,
    l2_error,
    run_convergence,
)

__version__ = "0.1.0"
