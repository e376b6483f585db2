"""Clustering of regression coefficients via data-driven segmentation."""
from .api import fit, preprocess
from .core import (
    DesignMatrix,
    FitResult,
    GroupedCoefficients,
    PairGraph,
    Partition,
    Segmentation,
    standardize,
    validate_partition,
)
from .metrics import cumulative_rss, false_positives, nmi, prediction_error
from .oracle import (
    irrepresentability_check,
    kkt_oracle_check,
    lambda_bounds,
    oracle_fit,
    regularity_constants,
    variance_pair,
)
from .penalty import PenaltySpec, penalty_derivative, penalty_value
from .preliminary import fit_ols, fit_scad_sparse
from .segmentation import build_pair_graph, build_segments, build_segments_sparse, default_delta, rank_map
from .solver import (
    SolverConfig,
    extract_partition,
    fit_acards,
    fit_bcards,
    fit_fused_ordered,
    fit_scards,
    fit_tv,
    lla_solve,
    solve_weighted_graph_lasso,
)
from .tuning import bic_score, gcv_score, grid_search, select_scad_preliminary

__version__ = "0.1.0"
