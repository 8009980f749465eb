"""Belief roadmap: uncertainty-aware sampling, edge construction through the
iterative connector, entropy-regularized edge costs, and best-first search.

Nodes are Gaussian beliefs (mean, covariance) plus an estimator prior; edges
carry full closed-loop trajectory distributions and their cost components so
a single graph can be searched under any entropy weight ``alpha``.
"""

import heapq
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .connector import EdgeConnectionResult, TrajectoryDistribution, connect
from .errors import (ConfigError, CovplanError, InfeasibleEdgeError,
                     NumericalInstabilityError, SamplingError)
from .sdf import collision_free

logger = logging.getLogger(__name__)

# Fraction by which the chi-square quantile is inflated so the coverage
# inequality holds strictly (not just in expectation) under Monte-Carlo
# checks.
DEFAULT_QUANTILE_INFLATION = 1.02

# Variance floor relative to the squared obstacle clearance, guarding the
# confidence-to-one degeneracy.
VARIANCE_FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class SamplerParams:
    """Uncertainty-aware node sampler knobs.

    Position covariance at a sample is isotropic,
    ``d_obs^2 / (inflation * q(confidence, dim)) * I`` with ``d_obs`` the
    obstacle clearance at the sample and ``q`` the chi-square quantile, so a
    Gaussian draw stays within ``d_obs`` of the mean with probability
    exceeding ``confidence``.
    """

    confidence: float = 0.95
    clearance: float = 0.1
    velocity_var: float = 0.02
    error_fraction: float = 0.25   # estimator prior P0 = fraction * Sigma
    neighbor_count: int | None = None   # default: 4 in 2D, 6 in 3D
    radius: float | None = None
    max_samples: int = 10_000
    quantile_inflation: float = DEFAULT_QUANTILE_INFLATION

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError("confidence must lie strictly in (0, 1)")
        if self.clearance < 0:
            raise ConfigError("clearance must be nonnegative")
        if self.velocity_var <= 0:
            raise ConfigError("velocity variance must be positive")
        if not 0.0 < self.error_fraction < 1.0:
            raise ConfigError("error fraction must lie strictly in (0, 1)")
        if self.neighbor_count is not None and self.neighbor_count < 1:
            raise ConfigError("neighbor count must be at least 1")
        if self.radius is not None and self.radius <= 0:
            raise ConfigError("neighbor radius must be positive")
        if self.max_samples < 1:
            raise ConfigError("sampling budget must be positive")
        if self.quantile_inflation < 1.0:
            raise ConfigError("quantile inflation must be at least 1")

    def neighbors_for_dim(self, dim: int) -> int:
        if self.neighbor_count is not None:
            return self.neighbor_count
        return 4 if dim == 2 else 6


@dataclass
class BeliefNode:
    """One roadmap vertex: a Gaussian belief plus the estimator prior."""

    id: int
    mean: np.ndarray       # (n,) position then velocity
    Sigma: np.ndarray      # (n, n) SPD
    P0: np.ndarray         # (n, n) PSD, P0 < Sigma
    feasible: bool = True

    def position(self, dim: int) -> np.ndarray:
        return self.mean[:dim]


@dataclass
class BeliefEdge:
    """Directed edge with its trajectory distribution and cost components.

    ``total_cost(alpha) = control + hinge + alpha * entropy`` — components
    are stored separately so the search can re-weight without rebuilding."""

    source: int
    target: int
    trajectory: TrajectoryDistribution
    control_cost: float
    hinge_cost: float
    entropy_cost: float
    wall_seconds: float = 0.0

    def total_cost(self, alpha: float) -> float:
        return self.control_cost + self.hinge_cost + alpha * self.entropy_cost


@dataclass
class BeliefGraph:
    nodes: list
    edges: list
    adjacency: dict = field(default_factory=dict)   # source id -> edge indices
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = {nd.id for nd in self.nodes}
        for e in self.edges:
            if e.source == e.target:
                raise ConfigError("self-edges are not allowed")
            if e.source not in ids or e.target not in ids:
                raise ConfigError("edge references a missing node")
        if not self.adjacency:
            self.adjacency = {}
            for i, e in enumerate(self.edges):
                self.adjacency.setdefault(e.source, []).append(i)

    def node_by_id(self, node_id: int) -> BeliefNode:
        for nd in self.nodes:
            if nd.id == node_id:
                return nd
        raise KeyError(f"no node with id {node_id}")


@dataclass
class PathResult:
    found: bool
    node_ids: list
    edges: list                 # ordered BeliefEdge list
    total_cost: float
    control_cost: float
    hinge_cost: float
    entropy_cost: float
    trajectory: dict | None    # concatenated per-knot arrays
    reason: str = ""


def position_variance(d_obs: float, confidence: float, dim: int,
                      inflation: float = DEFAULT_QUANTILE_INFLATION) -> float:
    """Isotropic per-axis position variance from the clearance radius.

    Chosen so P(|x - mean| < d_obs) > confidence for an isotropic Gaussian:
    the squared Mahalanobis radius is chi-square with ``dim`` degrees of
    freedom, so variance = d_obs^2 / (inflation * quantile)."""
    q = float(chi2.ppf(confidence, dim))
    var = d_obs * d_obs / (inflation * q)
    return max(var, VARIANCE_FLOOR_FRACTION * d_obs * d_obs)


def sample_belief(sdf_map, params: SamplerParams, rng, node_id: int = -1) -> BeliefNode:
    """Rejection-sample one feasible belief node on the map.

    Position is uniform over the grid bounding box, rejected until the
    signed distance exceeds the clearance threshold; the position covariance
    shrinks with the local clearance (see :func:`position_variance`),
    velocity is zero-mean with isotropic covariance, and the estimator prior
    is ``error_fraction * Sigma``.
    """
    dim = sdf_map.dim
    lo, hi = sdf_map.origin, sdf_map.upper
    for _ in range(params.max_samples):
        pos = rng.uniform(lo, hi)
        val, _, inb = sdf_map.value_grad(pos)
        if not inb or val <= params.clearance:
            continue
        d_obs = float(val)
        pvar = position_variance(d_obs, params.confidence, dim,
                                 params.quantile_inflation)
        diag = np.concatenate([np.full(dim, pvar),
                               np.full(dim, params.velocity_var)])
        Sigma = np.diag(diag)
        mean = np.concatenate([pos, np.zeros(dim)])
        return BeliefNode(id=node_id, mean=mean, Sigma=Sigma,
                          P0=params.error_fraction * Sigma)
    raise SamplingError(
        f"no feasible sample within {params.max_samples} tries "
        f"(clearance {params.clearance})")


def nearest_neighbors(graph: BeliefGraph, node: BeliefNode,
                      params: SamplerParams, dim: int) -> list:
    """The k nearest distinct nodes by position-mean distance.

    Ties break by ascending node id; an optional radius filters the result.
    """
    if not graph.nodes:
        raise ConfigError("graph has no nodes")
    k = params.neighbors_for_dim(dim)
    others = [nd for nd in graph.nodes if nd.id != node.id]
    keyed = sorted(
        others,
        key=lambda nd: (float(np.linalg.norm(nd.position(dim) - node.position(dim))),
                        nd.id))
    if params.radius is not None:
        keyed = [nd for nd in keyed
                 if np.linalg.norm(nd.position(dim) - node.position(dim))
                 <= params.radius]
    return keyed[:k]


def edge_cost(traj: TrajectoryDistribution, alpha: float, grid,
              sdf_map, cparams):
    """Cost components of one trajectory distribution (left Riemann sums).

    control = 1/2 sum_i ||K_i xbar_i + d_i||^2 dt  (mean-trajectory energy)
    hinge   = sum_i max(margin - S(xbar_i), 0)^2 dt
    entropy = -sum_i log det Sigma_i dt
    total   = control + hinge + alpha * entropy
    """
    if alpha < 0:
        raise ConfigError("entropy weight must be nonnegative")
    xbar, Sigma = traj.xbar, traj.Sigma
    dt = grid.dt
    dim = sdf_map.dim

    sign, logdet = np.linalg.slogdet(Sigma)
    if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
        raise NumericalInstabilityError(
            "trajectory covariance is not positive definite")

    u = np.einsum("kpn,kn->kp", traj.K, xbar) + traj.d
    control = 0.5 * float(np.sum(np.sum(u[:-1] ** 2, axis=1)) * dt)

    vals, _, inb = sdf_map.interpolate(xbar[:, :dim])
    h = np.maximum(cparams.margin - vals, 0.0)
    h = np.where(inb, h, cparams.margin)   # out of bounds: worst case
    hinge = float(np.sum(h[:-1] ** 2) * dt)

    entropy = -float(np.sum(logdet[:-1]) * dt)
    total = control + hinge + alpha * entropy
    return total, {"control": control, "hinge": hinge, "entropy": entropy}


def _edge_from_result(src: int, dst: int, result: EdgeConnectionResult,
                      alpha: float, grid, sdf_map, cparams) -> BeliefEdge:
    _, comps = edge_cost(result.trajectory, alpha, grid, sdf_map, cparams)
    return BeliefEdge(source=src, target=dst, trajectory=result.trajectory,
                      control_cost=comps["control"],
                      hinge_cost=comps["hinge"],
                      entropy_cost=comps["entropy"],
                      wall_seconds=result.wall_seconds)


def _node_feasible(node: BeliefNode, sdf_map, params: SamplerParams) -> bool:
    val, _, inb = sdf_map.value_grad(node.position(sdf_map.dim))
    if not inb or val <= params.clearance:
        return False
    w = np.linalg.eigvalsh(0.5 * (node.Sigma + node.Sigma.T) - node.P0)
    return bool(w[0] > 0)


def build_graph(model, sdf_map, cparams, connector_params, sampler_params,
                grid, alpha, n_samples, seed, start: BeliefNode,
                goal: BeliefNode, workers: int = 1,
                residual_tol: float = 1e-3) -> BeliefGraph:
    """Sample a belief roadmap and steer every candidate edge.

    Nodes are sampled sequentially from a single seeded stream; each
    unordered neighbor pair is steered in both directions, and a directed
    edge is retained only when the connection succeeds, its terminal moment
    residuals are below ``residual_tol``, and the mean path is
    collision-free. Edge tasks may run on a thread pool; results merge in
    canonical (source, target) order, so the graph is identical for any
    worker count.
    """
    dim = model.dim
    if not _node_feasible(start, sdf_map, sampler_params):
        raise InfeasibleEdgeError("start belief is infeasible on this map")
    if not _node_feasible(goal, sdf_map, sampler_params):
        raise InfeasibleEdgeError("goal belief is infeasible on this map")

    rng = np.random.default_rng(seed)
    nodes = [BeliefNode(0, np.asarray(start.mean, dtype=float),
                        np.asarray(start.Sigma, dtype=float),
                        np.asarray(start.P0, dtype=float)),
             BeliefNode(1, np.asarray(goal.mean, dtype=float),
                        np.asarray(goal.Sigma, dtype=float),
                        np.asarray(goal.P0, dtype=float))]
    for i in range(n_samples):
        nodes.append(sample_belief(sdf_map, sampler_params, rng,
                                   node_id=2 + i))

    graph = BeliefGraph(nodes=nodes, edges=[])
    pairs = set()
    for nd in nodes:
        for nb in nearest_neighbors(graph, nd, sampler_params, dim):
            pairs.add((min(nd.id, nb.id), max(nd.id, nb.id)))
    tasks = sorted([(i, j) for i, j in pairs] + [(j, i) for i, j in pairs])
    by_id = {nd.id: nd for nd in nodes}

    def steer(pair):
        src, dst = by_id[pair[0]], by_id[pair[1]]
        try:
            result = connect(model, sdf_map, cparams, connector_params, grid,
                             src.mean, src.Sigma, src.P0, dst.mean, dst.Sigma)
        except CovplanError as exc:
            return pair, None, f"{type(exc).__name__}: {exc}"
        traj = result.trajectory
        mres = np.linalg.norm(traj.xbar[-1] - dst.mean)
        cres = (np.linalg.norm(traj.Sigma[-1] - dst.Sigma)
                / np.linalg.norm(dst.Sigma))
        if mres > residual_tol * (1.0 + np.linalg.norm(dst.mean)):
            return pair, None, f"terminal mean residual {mres:.3e}"
        if cres > residual_tol:
            return pair, None, f"terminal covariance residual {cres:.3e}"
        if not collision_free(sdf_map, cparams, traj.xbar, dim):
            return pair, None, "mean path intersects an obstacle"
        return pair, result, ""

    t0 = time.monotonic()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(steer, tasks))
    else:
        outcomes = [steer(t) for t in tasks]
    build_seconds = time.monotonic() - t0

    edges = []
    dropped = []
    for pair, result, reason in sorted(outcomes, key=lambda o: o[0]):
        if result is None:
            dropped.append({"source": pair[0], "target": pair[1],
                            "reason": reason})
            logger.info("dropped edge %s -> %s: %s", pair[0], pair[1], reason)
            continue
        edges.append(_edge_from_result(pair[0], pair[1], result, alpha,
                                       grid, sdf_map, cparams))
    if not edges:
        logger.warning("no edges retained: the graph is disconnected")

    per_edge = [e.wall_seconds for e in edges]
    metadata = {
        "seed": int(seed),
        "alpha": float(alpha),
        "n_samples": int(n_samples),
        "attempted_edges": len(tasks),
        "dropped_edges": dropped,
        "build_seconds": build_seconds,
        "per_edge_mean_seconds": float(np.mean(per_edge)) if per_edge else 0.0,
        "per_edge_max_seconds": float(np.max(per_edge)) if per_edge else 0.0,
    }
    return BeliefGraph(nodes=nodes, edges=edges, metadata=metadata)


def concatenate_trajectories(edges: list) -> dict:
    """Knot-wise concatenation of edge trajectories, dropping the duplicated
    shared endpoint between consecutive edges."""
    if not edges:
        raise ValueError("need at least one edge")
    parts = {"xbar": [], "Sigma": [], "P": []}
    for i, e in enumerate(edges):
        sl = slice(None) if i == 0 else slice(1, None)
        parts["xbar"].append(e.trajectory.xbar[sl])
        parts["Sigma"].append(e.trajectory.Sigma[sl])
        parts["P"].append(e.trajectory.P[sl])
    return {k: np.concatenate(v, axis=0) for k, v in parts.items()}


def search_path(graph: BeliefGraph, start_id: int, goal_id: int,
                alpha: float, heuristic_scale: float = 0.0) -> PathResult:
    """Minimum-total-cost path under control + hinge + alpha * entropy.

    Best-first search with a zero heuristic by default (uniform-cost /
    Dijkstra). A positive ``heuristic_scale`` adds scaled Euclidean distance
    between position means; it is not guaranteed admissible and may cost
    optimality. Negative edge costs (possible for entropy-dominated edges)
    fall back to label-correcting relaxation; negative cycles raise.
    """
    ids = {nd.id for nd in graph.nodes}
    if start_id not in ids or goal_id not in ids:
        raise KeyError("start or goal id not in graph")
    if start_id == goal_id:
        return PathResult(True, [start_id], [], 0.0, 0.0, 0.0, 0.0, None)

    costs = {i: e.total_cost(alpha) for i, e in enumerate(graph.edges)}
    has_negative = any(c < 0 for c in costs.values())

    if has_negative:
        logger.warning("negative edge costs at alpha=%g: "
                       "using label-correcting search", alpha)
        return _bellman_ford(graph, start_id, goal_id, costs, alpha)

    dim = graph.nodes[0].mean.shape[0] // 2
    pos = {nd.id: nd.position(dim) for nd in graph.nodes}
    goal_pos = pos[goal_id]

    def h(node_id):
        if heuristic_scale <= 0:
            return 0.0
        return heuristic_scale * float(np.linalg.norm(pos[node_id] - goal_pos))

    dist = {start_id: 0.0}
    parent = {}
    done = set()
    heap = [(h(start_id), start_id)]
    while heap:
        _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == goal_id:
            break
        for ei in graph.adjacency.get(u, []):
            e = graph.edges[ei]
            nd = dist[u] + costs[ei]
            if nd < dist.get(e.target, np.inf):
                dist[e.target] = nd
                parent[e.target] = (u, ei)
                heapq.heappush(heap, (nd + h(e.target), e.target))

    if goal_id not in parent and goal_id != start_id:
        return PathResult(False, [], [], np.inf, 0.0, 0.0, 0.0, None,
                          reason="goal unreachable from start")
    return _assemble_path(graph, start_id, goal_id, parent, alpha)


def _assemble_path(graph, start_id, goal_id, parent, alpha) -> PathResult:
    edge_list = []
    node_ids = [goal_id]
    u = goal_id
    while u != start_id:
        u, ei = parent[u]
        edge_list.append(graph.edges[ei])
        node_ids.append(u)
    edge_list.reverse()
    node_ids.reverse()
    control = sum(e.control_cost for e in edge_list)
    hinge = sum(e.hinge_cost for e in edge_list)
    entropy = sum(e.entropy_cost for e in edge_list)
    return PathResult(True, node_ids, edge_list,
                      control + hinge + alpha * entropy,
                      control, hinge, entropy,
                      concatenate_trajectories(edge_list))


def _bellman_ford(graph, start_id, goal_id, costs, alpha) -> PathResult:
    dist = {nd.id: np.inf for nd in graph.nodes}
    dist[start_id] = 0.0
    parent = {}
    n_nodes = len(graph.nodes)
    for rounds in range(n_nodes):
        changed = False
        for ei, e in enumerate(graph.edges):
            if dist[e.source] + costs[ei] < dist[e.target] - 1e-15:
                dist[e.target] = dist[e.source] + costs[ei]
                parent[e.target] = (e.source, ei)
                changed = True
        if not changed:
            break
    else:
        raise NumericalInstabilityError(
            "negative-cost cycle: path costs unbounded below at this alpha")
    if not np.isfinite(dist[goal_id]):
        return PathResult(False, [], [], np.inf, 0.0, 0.0, 0.0, None,
                          reason="goal unreachable from start")
    return _assemble_path(graph, start_id, goal_id, parent, alpha)
