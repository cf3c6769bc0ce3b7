"""Non-stationary flexible Besag spatial models for areal count data."""

from .graph import (
    AdjacencyGraph,
    GraphParseError,
    Partition,
    build_partition,
    connected_components,
    grid_graph,
    parse_graph,
    parse_partition_csv,
    quadrant_partition,
    serialize_graph,
)
from .pcprior import (
    PcPriorConfig,
    ThetaVector,
    lambda_from,
    log_joint_pc_prior,
    log_pc_prior_univariate,
    sample_prior,
)
from .precision import (
    ConstraintSet,
    FbesagPrecision,
    build_precision,
    conditional_params,
    cyclic_rw1_precision,
    log_density,
    sample_field,
    stationary_precision,
    sum_to_zero_constraints,
)

__version__ = "0.1.0"
