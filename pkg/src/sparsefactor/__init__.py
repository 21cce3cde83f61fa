"""Regularized maximum-likelihood estimation of high-dimensional approximate factor models.

Estimators
----------
- principal components (``pca_estimate``)
- POET-style adaptive thresholding of the residual covariance (``poet_estimate``)
- two-step quasi-ML with a thresholded covariance plug-in (``twostep_estimate``)
- joint weighted-l1 penalized ML via EM + majorize-minimize (``joint_estimate``)
- diagonal-ML baseline (``dml_estimate``)

plus a seeded Monte Carlo harness (``sparsefactor.simharness``) and a CLI
(``sparsefactor``).
"""

from .exceptions import (
    ConfigError,
    DefinitenessError,
    DimensionError,
    FactorModelError,
    InvalidInputError,
    NumericalError,
    ParameterError,
    SearchFailureError,
    SingularMatrixError,
    StepFailureError,
)
from .jointpml import (
    PenaltySpec,
    WeightMatrix,
    dml_estimate,
    em_covariance_target,
    joint_estimate,
    matrix_soft_threshold,
    mm_covariance_step,
    penalized_objective,
    penalty_weights,
)
from .panel import (
    PanelData,
    RateDiagnostics,
    SampleCovariance,
    SpectralDecomp,
    canonical_correlations,
    center_panel,
    rate_diagnostics,
    sample_covariance,
    spectral_decompose,
)
from .pca import PcaFit, pca_estimate, pca_residual_covariance
from .poet import (
    SparseCovEstimate,
    ThresholdRule,
    adaptive_tau,
    find_min_positive_C,
    min_eigen_curve,
    poet_estimate,
    threshold_value,
)
from .simharness import (
    CellResult,
    DGPTruth,
    EstimatorConfig,
    MonteCarloReport,
    ReplicationRecord,
    SparsistencyRecord,
    generate_dgp,
    generate_identity_noise_dgp,
    monte_carlo,
    run_replication,
    sparsistency_report,
)
from .twostep import (
    FactorEstimate,
    em_update_loadings,
    gls_factors,
    identify_rotate,
    neg_loglik,
    neg_loglik_grad,
    twostep_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "CellResult",
    "ConfigError",
    "DGPTruth",
    "DefinitenessError",
    "DimensionError",
    "EstimatorConfig",
    "FactorEstimate",
    "FactorModelError",
    "InvalidInputError",
    "MonteCarloReport",
    "NumericalError",
    "PanelData",
    "ParameterError",
    "PcaFit",
    "PenaltySpec",
    "RateDiagnostics",
    "ReplicationRecord",
    "SampleCovariance",
    "SearchFailureError",
    "SingularMatrixError",
    "SparseCovEstimate",
    "SparsistencyRecord",
    "SpectralDecomp",
    "StepFailureError",
    "ThresholdRule",
    "WeightMatrix",
    "adaptive_tau",
    "canonical_correlations",
    "center_panel",
    "dml_estimate",
    "em_covariance_target",
    "em_update_loadings",
    "find_min_positive_C",
    "generate_dgp",
    "generate_identity_noise_dgp",
    "gls_factors",
    "identify_rotate",
    "joint_estimate",
    "matrix_soft_threshold",
    "min_eigen_curve",
    "mm_covariance_step",
    "monte_carlo",
    "neg_loglik",
    "neg_loglik_grad",
    "pca_estimate",
    "pca_residual_covariance",
    "penalized_objective",
    "penalty_weights",
    "poet_estimate",
    "rate_diagnostics",
    "run_replication",
    "sample_covariance",
    "sparsistency_report",
    "spectral_decompose",
    "threshold_value",
    "twostep_estimate",
]
