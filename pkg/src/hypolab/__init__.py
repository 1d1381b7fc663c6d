"""hypolab: numerical checks for global hypoellipticity of periodic systems.

Decides, at finite resolution, whether D_t + Q(t, D_x) on a torus admits
smooth solutions for smooth data: reduce the symbol smoothly to triangular
form, test eigenvalue averages against integer resonances and Diophantine
lower bounds, solve the periodic modes explicitly, and build counterexample
data when the answer is no.
"""

import os as _os

# Pin BLAS pools before numpy is imported anywhere in the package. Explicit
# user environment wins; the knob only fills in unset variables.
_threads = _os.environ.get("HYPO_LAB_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

from .params import DEFAULT_TOL, Tolerances  # noqa: E402
from .symbol_algebra import (  # noqa: E402
    EvalDomainError,
    ExprSyntaxError,
    InsufficientData,
    Lattice,
    MatrixSymbol,
    OrderFit,
    SpatialExpr,
    TrigPolynomial,
    UnknownIdentifier,
    estimate_order,
    order_fit_from_stats,
    parse_spatial_expr,
    time_average,
    time_derivative,
)
from .fourier_tools import (  # noqa: E402
    DISTRIBUTION_ONLY,
    DIVERGENT,
    SMOOTH,
    DecayReport,
    ModeTable,
    classify_decay,
    mean_removed_antiderivative,
    periodic_quadrature,
    spectral_derivative,
)
from .triangularization import (  # noqa: E402
    BranchCrossingError,
    ConditionReport,
    EigenField,
    EigenSolverFailure,
    NoPivot,
    NotCommuting,
    TriangularForm,
    branch_sort_key,
    eigen_field,
    schur_constant,
    simultaneous_schur,
    smooth_triangularize,
    verify_strong_conditions,
)
from .diagnostics import (  # noqa: E402
    DiophantineFit,
    FitResidualTooLarge,
    GHVerdict,
    PerturbationFit,
    diagnose_constant_full,
    diagnose_dt_plus_Q,
    diagnose_variable,
    diophantine_fit,
    min_tau_distance,
    perturbation_track,
    reduce_higher_order,
    resonance_set,
    scan_scalar_distance,
    siegel_distance,
)
from .mode_solver import (  # noqa: E402
    EmptyWitnessList,
    ModeSolution,
    NoConvergence,
    Resonant,
    back_substitute,
    build_nonsmooth_solution,
    mode_residual,
    solve_full,
    solve_periodic_mode,
)

__version__ = "0.1.0"
