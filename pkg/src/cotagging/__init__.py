"""Tag-question bipartite graphs and their co-tagging networks."""

from .analysis import (
    AnalysisReport,
    analyze_graph,
    compare_model_to_data,
    cubic_log_fit,
    expected_unique_cotags,
    expected_weighted_cotags,
    linear_cotag_regression,
    pca_explained_variance,
)
from .cotag import CotagGraph, clustering_report, project
from .distfit import DistributionFit, fit, fit_all, fit_lognormal, likelihood_ratio_test
from .errors import CotagError, DataError, FitError, NumericError, ParseError
from .generator import GenerationReport, GeneratorConfig, generate, solve_corrected_questions
from .ingest import BipartiteTagGraph, CommunityDataset, build_bipartite, parse_posts_xml, parse_tsv, summary

__version__ = "0.1.0"
