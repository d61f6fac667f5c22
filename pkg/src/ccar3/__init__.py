"""Canonical correlation analysis via reduced-rank regression."""
from .admm import (
    AdmmConfig,
    SolveTrace,
    rho_max,
    row_shrink,
    solve_graph_tv,
    solve_group_l21,
    solve_ridge,
    solve_sparse_l21,
)
from .estimators import (
    CcaModel,
    FitOptions,
    GraphPenalty,
    GroupPenalty,
    NoPenalty,
    RidgePenalty,
    SparsePenalty,
    canonical_variates,
    cca_gep_oracle,
    fit,
    fit_cca_penalized,
    fit_cca_rrr,
    normalize_y,
)
from .evaluation import (
    CvReport,
    MethodSpec,
    benchmark_run,
    kfold_cv,
    principal_angles,
    stacked_direction_distance,
    subspace_distance,
    support_metrics,
    validation_correlation,
)
from .exceptions import (
    CCAError,
    CvFailed,
    DimensionMismatch,
    EmptyModel,
    GenerationFailed,
    InvalidGraph,
    InvalidInput,
    NotPSD,
    RankDeficient,
)
from .graphs import GraphStructure, build_graph, grid_graph, knn_graph, spectral_constants
from .linalg import ledoit_wolf, sym_inv_sqrt, sym_sqrt, top_r_svd
from .synthetic import GroundTruth, SimConfig, generate, sample_joint

__version__ = "0.1.0"
