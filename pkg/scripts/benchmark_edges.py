#!/usr/bin/env python3
"""Time roadmap construction in 2D and 3D and print per-edge statistics."""

import argparse

import numpy as np

from covplan import (BeliefNode, CollisionCostParams, ConnectorParams,
                     DoubleIntegrator, ObstacleSet, SamplerParams, Sphere,
                     TimeGrid, build_graph, build_sdf, position_observation)


def run(dim, n_samples, max_iterations, seed, workers):
    if dim == 2:
        obs = ObstacleSet((Sphere((0.0, 0.35), 0.8),))
        sdf_map = build_sdf(obs, (-5.0, -5.0), 0.1, (101, 101))
        lo, hi = -4.0, 4.0
    else:
        obs = ObstacleSet((Sphere((0.0, 0.0, 0.0), 1.0),
                           Sphere((2.0, 2.0, 1.0), 0.8),
                           Sphere((-2.0, 1.5, -1.0), 0.8)))
        sdf_map = build_sdf(obs, (-5.0,) * 3, 0.25, (41,) * 3)
        lo, hi = -3.5, 3.5
    model = DoubleIntegrator(dim=dim, drag_coeff=0.0, epsilon=0.01,
                             observation=position_observation(dim, 0.01))
    S = np.diag([0.15] * dim + [0.02] * dim)
    start = BeliefNode(0, np.array([lo] * dim + [0.0] * dim), S, 0.25 * S)
    goal = BeliefNode(1, np.array([hi] * dim + [0.0] * dim), S, 0.25 * S)

    graph = build_graph(model, sdf_map, CollisionCostParams(0.2, 3e5),
                        ConnectorParams(0.001, max_iterations, 1e-4),
                        SamplerParams(clearance=0.3, velocity_var=0.02,
                                      neighbor_count=3),
                        TimeGrid(1.0, 50), alpha=0.2, n_samples=n_samples,
                        seed=seed, start=start, goal=goal, workers=workers)
    m = graph.metadata
    print(f"{dim}D: nodes={len(graph.nodes)} retained={len(graph.edges)} "
          f"attempted={m['attempted_edges']} total={m['build_seconds']:.1f}s "
          f"per-edge mean={m['per_edge_mean_seconds']:.2f}s "
          f"max={m['per_edge_max_seconds']:.2f}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    run(2, 28, 50, args.seed, args.workers)
    run(3, 23, 100, args.seed, args.workers)


if __name__ == "__main__":
    main()
