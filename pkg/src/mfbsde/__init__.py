"""Monte Carlo laboratory for mean-field forward-backward SDE approximations."""

__version__ = "0.1.0"

from .backward import (
    BsdeSolution,
    check_comparison,
    solve_bsde_n,
    solve_linear_limit_bsde,
    solve_mfbsde,
)
from .fluctuation import (
    CovarianceMatrix,
    FieldLattice,
    clt_compare,
    empirical_fields,
    sample_field_along_path,
    sample_field_on_lattice,
    solve_limit_system,
    theoretical_covariance,
)
from .forward import (
    EnvironmentDraw,
    LawFlow,
    PathEnsemble,
    forward_error,
    solve_classical_system,
    solve_limit_forward,
    solve_sde_n,
)
from .harness import (
    ExperimentConfig,
    StudyReport,
    emit_report,
    parse_config,
    run_clt_study,
    run_convergence_study,
)
from .model import ModelSpec, catalog_model, check_gradients, evaluate_mean_field
from .noise import StreamKey, TimeGrid, brownian_increments, derive_key, standard_normals

__all__ = [
    "BsdeSolution",
    "CovarianceMatrix",
    "EnvironmentDraw",
    "ExperimentConfig",
    "FieldLattice",
    "LawFlow",
    "ModelSpec",
    "PathEnsemble",
    "StreamKey",
    "StudyReport",
    "TimeGrid",
    "brownian_increments",
    "catalog_model",
    "check_comparison",
    "check_gradients",
    "clt_compare",
    "derive_key",
    "emit_report",
    "empirical_fields",
    "evaluate_mean_field",
    "forward_error",
    "parse_config",
    "run_clt_study",
    "run_convergence_study",
    "sample_field_along_path",
    "sample_field_on_lattice",
    "solve_bsde_n",
    "solve_classical_system",
    "solve_limit_forward",
    "solve_limit_system",
    "solve_linear_limit_bsde",
    "solve_mfbsde",
    "solve_sde_n",
    "standard_normals",
    "theoretical_covariance",
    "__version__",
]
