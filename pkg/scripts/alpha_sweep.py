#!/usr/bin/env python3
"""Sweep the entropy weight on a two-corridor scene and print the tradeoff.

A thick wall pierced by a narrow tunnel (good localization, tight
covariances) competes with an open detour over the wall (cheap control,
poor localization). As alpha grows the planner switches routes and the
selected path's entropy cost falls monotonically.
"""

import argparse

import numpy as np

from covplan import (BeliefEdge, BeliefGraph, BeliefNode, Box,
                     CollisionCostParams, ConnectorParams, DoubleIntegrator,
                     ObstacleSet, TimeGrid, build_sdf, connect, edge_cost,
                     position_observation, position_variance, search_path)


def build_scene():
    wall = ObstacleSet((Box((-1.05, -5.0), (1.05, -0.35)),
                        Box((-1.05, 0.35), (1.05, 1.4))))
    sdf_map = build_sdf(wall, (-5.0, -5.0), 0.1, (101, 101))
    model = DoubleIntegrator(dim=2, drag_coeff=0.0, epsilon=0.01,
                             observation=position_observation(2, 0.005))
    grid = TimeGrid(2.0, 50)
    cparams = CollisionCostParams(margin=0.1, weight=1e5)
    conn = ConnectorParams(step_size=0.001, max_iterations=30, tolerance=1e-4)

    def belief(i, p):
        val, _, _ = sdf_map.value_grad(np.asarray(p))
        pv = position_variance(min(float(val), 1.1), 0.95, 2)
        S = np.diag([pv, pv, 0.02, 0.02])
        return BeliefNode(i, np.array([p[0], p[1], 0.0, 0.0]), S, 0.25 * S)

    nodes = [belief(0, (-2.8, 0.0)), belief(1, (2.8, 0.0)),
             belief(2, (-0.7, 0.0)), belief(3, (0.7, 0.0)),
             belief(4, (0.0, 2.8))]
    edges = []
    for src, dst in [(0, 2), (2, 3), (3, 1), (0, 4), (4, 1)]:
        a, b = nodes[src], nodes[dst]
        res = connect(model, sdf_map, cparams, conn, grid,
                      a.mean, a.Sigma, a.P0, b.mean, b.Sigma)
        _, comps = edge_cost(res.trajectory, 0.0, grid, sdf_map, cparams)
        edges.append(BeliefEdge(source=src, target=dst,
                                trajectory=res.trajectory,
                                control_cost=comps["control"],
                                hinge_cost=comps["hinge"],
                                entropy_cost=comps["entropy"]))
        print(f"edge {src}->{dst}: control+hinge="
              f"{comps['control'] + comps['hinge']:.2f} "
              f"entropy={comps['entropy']:.2f}")
    return BeliefGraph(nodes=nodes, edges=edges)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", type=float, nargs="*",
                    default=list(np.round(np.linspace(0.0, 1.0, 11), 2)))
    args = ap.parse_args()

    graph = build_scene()
    print(f"\n{'alpha':>6} {'path':<14} {'total':>9} {'ctrl+hinge':>11} "
          f"{'entropy':>9}")
    for alpha in args.alphas:
        r = search_path(graph, 0, 1, alpha)
        path = "-".join(str(i) for i in r.node_ids) if r.found else "none"
        print(f"{alpha:>6.2f} {path:<14} {r.total_cost:>9.3f} "
              f"{r.control_cost + r.hinge_cost:>11.3f} "
              f"{r.entropy_cost:>9.3f}")


if __name__ == "__main__":
    main()
