"""JSON file formats for maps, belief graphs, and path reports.

All files carry ``schema_version``. Graph files are deterministic for a
fixed seed except for the timing fields, which live under known keys so
they can be stripped for byte-level comparison.
"""

import json

import numpy as np

from .connector import TrajectoryDistribution
from .errors import ConfigError
from .roadmap import BeliefEdge, BeliefGraph, BeliefNode, PathResult
from .sdf import Box, ObstacleSet, SdfMap, Sphere, build_sdf

SCHEMA_VERSION = 1

# keys whose values may differ between otherwise identical runs
TIMING_KEYS = ("build_seconds", "per_edge_mean_seconds",
               "per_edge_max_seconds", "wall_seconds")


def _arr(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def _dump(data: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load(path, kind: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{kind} file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{kind} file root must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported {kind} schema_version {version}")
    return data


# --------------------------------------------------------------------------
# maps
# --------------------------------------------------------------------------

def save_map(obstacles: ObstacleSet, origin, cell_size, extents, path) -> None:
    prims = []
    for p in obstacles.primitives:
        if isinstance(p, Box):
            prims.append({"type": "box", "lo": _arr(p.lo), "hi": _arr(p.hi)})
        elif isinstance(p, Sphere):
            prims.append({"type": "sphere", "center": _arr(p.center),
                          "radius": float(p.radius)})
        else:
            raise ConfigError(f"unserializable obstacle type {type(p).__name__}")
    _dump({"schema_version": SCHEMA_VERSION,
           "origin": _arr(origin), "cell_size": float(cell_size),
           "extents": [int(e) for e in extents], "obstacles": prims}, path)


def load_map(path):
    """Returns (ObstacleSet, SdfMap) with the field sampled onto the grid."""
    data = _load(path, "map")
    for key in ("origin", "cell_size", "extents", "obstacles"):
        if key not in data:
            raise ConfigError(f"map file missing key {key!r}")
    prims = []
    for entry in data["obstacles"]:
        kind = entry.get("type")
        if kind == "box":
            prims.append(Box(np.asarray(entry["lo"]), np.asarray(entry["hi"])))
        elif kind == "sphere":
            prims.append(Sphere(np.asarray(entry["center"]),
                                float(entry["radius"])))
        else:
            raise ConfigError(f"unknown obstacle type {kind!r}")
    obstacles = ObstacleSet(tuple(prims))
    sdf_map = build_sdf(obstacles, np.asarray(data["origin"], dtype=float),
                        float(data["cell_size"]),
                        tuple(int(e) for e in data["extents"]))
    return obstacles, sdf_map


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------

def _traj_to_dict(t: TrajectoryDistribution) -> dict:
    return {"xbar": _arr(t.xbar), "Sigma": _arr(t.Sigma), "P": _arr(t.P),
            "Sigma_est": _arr(t.Sigma_est), "K": _arr(t.K), "d": _arr(t.d),
            "A_cl": _arr(t.A_cl), "a_cl": _arr(t.a_cl)}


def _traj_from_dict(d: dict) -> TrajectoryDistribution:
    return TrajectoryDistribution(
        xbar=np.asarray(d["xbar"]), Sigma=np.asarray(d["Sigma"]),
        P=np.asarray(d["P"]), Sigma_est=np.asarray(d["Sigma_est"]),
        K=np.asarray(d["K"]), d=np.asarray(d["d"]),
        A_cl=np.asarray(d["A_cl"]), a_cl=np.asarray(d["a_cl"]))


def graph_to_dict(graph: BeliefGraph) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": graph.metadata,
        "nodes": [{"id": nd.id, "mean": _arr(nd.mean),
                   "Sigma": _arr(nd.Sigma), "P0": _arr(nd.P0)}
                  for nd in graph.nodes],
        "edges": [{"source": e.source, "target": e.target,
                   "control_cost": e.control_cost,
                   "hinge_cost": e.hinge_cost,
                   "entropy_cost": e.entropy_cost,
                   "wall_seconds": e.wall_seconds,
                   "trajectory": _traj_to_dict(e.trajectory)}
                  for e in graph.edges],
    }


def graph_from_dict(data: dict) -> BeliefGraph:
    nodes = [BeliefNode(id=int(nd["id"]), mean=np.asarray(nd["mean"]),
                        Sigma=np.asarray(nd["Sigma"]), P0=np.asarray(nd["P0"]))
             for nd in data["nodes"]]
    edges = [BeliefEdge(source=int(e["source"]), target=int(e["target"]),
                        trajectory=_traj_from_dict(e["trajectory"]),
                        control_cost=float(e["control_cost"]),
                        hinge_cost=float(e["hinge_cost"]),
                        entropy_cost=float(e["entropy_cost"]),
                        wall_seconds=float(e["wall_seconds"]))
             for e in data["edges"]]
    return BeliefGraph(nodes=nodes, edges=edges,
                       metadata=data.get("metadata", {}))


def save_graph(graph: BeliefGraph, path) -> None:
    _dump(graph_to_dict(graph), path)


def load_graph(path) -> BeliefGraph:
    return graph_from_dict(_load(path, "graph"))


def strip_timing(data):
    """Recursively remove timing keys; use before byte-comparing runs."""
    if isinstance(data, dict):
        return {k: strip_timing(v) for k, v in data.items()
                if k not in TIMING_KEYS}
    if isinstance(data, list):
        return [strip_timing(v) for v in data]
    return data


# --------------------------------------------------------------------------
# path reports
# --------------------------------------------------------------------------

def path_report_to_dict(result: PathResult, grid, alpha: float,
                        wall_seconds: float = 0.0) -> dict:
    if not result.found:
        raise ConfigError("cannot report an unfound path")
    knots = result.trajectory
    n_knots = knots["xbar"].shape[0] if knots is not None else 0
    times = [grid.dt * i for i in range(n_knots)]
    return {
        "schema_version": SCHEMA_VERSION,
        "alpha": float(alpha),
        "node_ids": list(result.node_ids),
        "total_cost": float(result.total_cost),
        "control_cost": float(result.control_cost),
        "hinge_cost": float(result.hinge_cost),
        "entropy_cost": float(result.entropy_cost),
        "edges": [{"source": e.source, "target": e.target,
                   "control_cost": e.control_cost, "hinge_cost": e.hinge_cost,
                   "entropy_cost": e.entropy_cost,
                   "total_cost": e.total_cost(alpha)}
                  for e in result.edges],
        "knots": {
            "t": times,
            "xbar": _arr(knots["xbar"]) if knots is not None else [],
            "Sigma": _arr(knots["Sigma"]) if knots is not None else [],
            "P": _arr(knots["P"]) if knots is not None else [],
        },
        "wall_seconds": wall_seconds,
    }


def save_path_report(result: PathResult, grid, alpha: float, path,
                     wall_seconds: float = 0.0) -> None:
    _dump(path_report_to_dict(result, grid, alpha, wall_seconds), path)


def load_path_report(path) -> dict:
    return _load(path, "path report")
