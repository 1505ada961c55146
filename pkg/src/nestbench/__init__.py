"""Long-only benchmark portfolios from multilevel industry classifications,
plus a bounded dollar-neutral overlay aimed at outperforming them."""

from .benchmark import (
    BenchmarkResult,
    BetaSpec,
    GeneralFactorResult,
    benchmark_weights,
    benchmark_weights_oracle,
    general_factor_weights,
    make_betas,
)
from .data_model import (
    BetaVector,
    ClassificationTree,
    ReturnsPanel,
    SingletonCluster,
    load_classification_csv,
    load_returns_csv,
    tree_from_labels,
    validate_tree,
    write_classification_csv,
    write_returns_csv,
)
from .overlay import (
    CombinedPortfolio,
    KKTReport,
    OverlayProblem,
    OverlayResult,
    build_constraints,
    combine,
    default_gamma_max,
    kkt_check,
    make_overlay_problem,
    optimize_mvo,
    residualize,
    sharpe_ratio,
    tune_gamma,
)
from .risk_model import (
    RussianDollModel,
    ThetaFitConfig,
    assemble_dense,
    build_russian_doll,
    fit_theta,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from .stats_core import (
    CovarianceMatrix,
    RegressionBetas,
    betas_from_weights,
    sample_covariance,
    serial_betas,
)
from .synthetic import SyntheticInstance, SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult",
    "BetaSpec",
    "BetaVector",
    "ClassificationTree",
    "CombinedPortfolio",
    "CovarianceMatrix",
    "GeneralFactorResult",
    "KKTReport",
    "OverlayProblem",
    "OverlayResult",
    "RegressionBetas",
    "ReturnsPanel",
    "RussianDollModel",
    "SingletonCluster",
    "SyntheticInstance",
    "SyntheticSpec",
    "ThetaFitConfig",
    "assemble_dense",
    "benchmark_weights",
    "benchmark_weights_oracle",
    "betas_from_weights",
    "build_constraints",
    "build_russian_doll",
    "combine",
    "default_gamma_max",
    "fit_theta",
    "general_factor_weights",
    "generate",
    "kkt_check",
    "load_classification_csv",
    "load_model",
    "load_returns_csv",
    "make_betas",
    "make_overlay_problem",
    "model_from_dict",
    "model_to_dict",
    "optimize_mvo",
    "residualize",
    "sample_covariance",
    "save_model",
    "serial_betas",
    "sharpe_ratio",
    "tree_from_labels",
    "tune_gamma",
    "validate_tree",
    "write_classification_csv",
    "write_returns_csv",
]
