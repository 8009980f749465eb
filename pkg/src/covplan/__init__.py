"""covplan: belief roadmap planning under uncertainty.

Gaussian beliefs are steered between roadmap nodes by iterative covariance
steering with output-feedback (EKF) bookkeeping and signed-distance-field
collision costs; the roadmap is searched under entropy-regularized edge
costs.
"""

from .connector import (ConnectorParams, EdgeConnectionResult,
                        TrajectoryDistribution, connect, ekf_riccati)
from .dynamics import (DoubleIntegrator, LinearObservation,
                       full_state_observation, position_observation)
from .errors import (ConfigError, CovplanError, InfeasibleEdgeError,
                     NumericalInstabilityError, SamplingError)
from .grid import TimeGrid
from .roadmap import (BeliefEdge, BeliefGraph, BeliefNode, PathResult,
                      SamplerParams, build_graph, edge_cost,
                      nearest_neighbors, position_variance, sample_belief,
                      search_path)
from .sdf import (Box, CollisionCostParams, ObstacleSet, SdfMap, Sphere,
                  build_sdf, collision_free, hinge_cost, load_sdf_cache,
                  save_sdf_cache)
from .steering import (BoundaryMoments, FeedbackPolicy, LqDrivingTerms,
                       propagate_closed_loop, solve_linear_steering)

__version__ = "0.1.0"

__all__ = [
    "BeliefEdge", "BeliefGraph", "BeliefNode", "BoundaryMoments", "Box",
    "CollisionCostParams", "ConfigError", "ConnectorParams", "CovplanError",
    "DoubleIntegrator", "EdgeConnectionResult", "FeedbackPolicy",
    "InfeasibleEdgeError", "LinearObservation", "LqDrivingTerms",
    "NumericalInstabilityError", "ObstacleSet", "PathResult",
    "SamplerParams", "SamplingError", "SdfMap", "Sphere", "TimeGrid",
    "TrajectoryDistribution", "build_graph", "build_sdf", "collision_free",
    "connect", "edge_cost", "ekf_riccati", "full_state_observation",
    "hinge_cost", "load_sdf_cache", "nearest_neighbors",
    "position_observation", "propagate_closed_loop", "position_variance", "sample_belief",
    "save_sdf_cache", "search_path", "solve_linear_steering", "__version__",
]
