#!/usr/bin/env python3
"""End-to-end demo: sample a belief roadmap around one obstacle and plan.

Writes graph.json, path.json, and path.svg into --out (default ./demo_out).
"""

import argparse
import json
import pathlib

import numpy as np

from covplan import (BeliefNode, CollisionCostParams, ConnectorParams,
                     DoubleIntegrator, ObstacleSet, SamplerParams, Sphere,
                     TimeGrid, build_graph, build_sdf, position_observation,
                     search_path)
from covplan.serialize import save_graph, save_path_report
from covplan.plotting import save_svg


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alpha", type=float, default=0.2)
    ap.add_argument("--samples", type=int, default=18)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    obstacles = ObstacleSet((Sphere((0.0, 0.35), 0.8),))
    sdf_map = build_sdf(obstacles, (-5.0, -5.0), 0.1, (101, 101))
    model = DoubleIntegrator(dim=2, drag_coeff=0.0, epsilon=0.01,
                             observation=position_observation(2, 0.01))
    grid = TimeGrid(1.0, 50)
    S = np.diag([0.15, 0.15, 0.02, 0.02])
    start = BeliefNode(0, np.array([-4.0, -4.0, 0.0, 0.0]), S, 0.25 * S)
    goal = BeliefNode(1, np.array([4.0, 4.0, 0.0, 0.0]), S, 0.25 * S)

    graph = build_graph(model, sdf_map, CollisionCostParams(0.2, 3e5),
                        ConnectorParams(0.001, 50, 1e-4),
                        SamplerParams(clearance=0.3, velocity_var=0.02,
                                      neighbor_count=3),
                        grid, alpha=args.alpha, n_samples=args.samples,
                        seed=args.seed, start=start, goal=goal,
                        workers=args.workers)
    save_graph(graph, out / "graph.json")
    meta = graph.metadata
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges "
          f"({meta['attempted_edges']} attempted, "
          f"{meta['build_seconds']:.1f}s)")

    result = search_path(graph, 0, 1, args.alpha)
    if not result.found:
        raise SystemExit(f"no path: {result.reason}")
    save_path_report(result, grid, args.alpha, out / "path.json")
    print(f"path {result.node_ids}: total={result.total_cost:.3f} "
          f"control={result.control_cost:.3f} hinge={result.hinge_cost:.3f} "
          f"entropy={result.entropy_cost:.3f}")

    segments = [{"xbar": e.trajectory.xbar, "Sigma": e.trajectory.Sigma,
                 "P": e.trajectory.P} for e in result.edges]
    save_svg(segments, out / "path.svg", obstacles=obstacles,
             bounds=(sdf_map.origin[:2], sdf_map.upper[:2]))
    print(f"wrote {out}/graph.json, path.json, path.svg")


if __name__ == "__main__":
    main()
