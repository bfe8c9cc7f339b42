"""Ollivier-Ricci curvature, discrete Ricci flow with surgery, and market clustering."""

__version__ = "0.1.0"

from .curvature import (  # noqa: E402
    CurvatureField,
    FlowConfig,
    FlowHistory,
    curvature_field,
    edge_curvature,
    flow_step,
    lin_yau_lower_bound,
    lly_limit_curvature,
    run_flow,
)
from .errors import (  # noqa: E402
    ConfigError,
    DisconnectedGraphError,
    FormatError,
    GraphError,
    InputError,
    InsufficientDataError,
    NumericalError,
    RicciError,
    TransportError,
)
from .graph import DistanceMatrix, WeightedGraph, all_pairs_shortest, connected_components  # noqa: E402
from .market_data import (  # noqa: E402
    compute_returns,
    correlation_to_weights,
    fetch_prices,
    load_prices,
    pearson_correlation,
)
from .surgery import ClusterTree, SurgeryConfig, build_hierarchy, compare_partitions, surgery  # noqa: E402
from .transport import ProbabilityMeasure, lazy_measure, wasserstein, wasserstein_oracle  # noqa: E402
