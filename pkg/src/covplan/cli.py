"""Command-line interface.

Subcommands: ``build-graph``, ``plan``, ``steer-edge``, ``plot``.

Exit codes: 0 success; 1 usage or parse error; 2 infeasible problem;
3 no path / disconnected graph; 4 numerical failure.

The worker count resolves as: ``--workers`` flag, else the
``COVPLAN_WORKERS`` environment variable, else the config value.
"""

import argparse
import os
import sys
import time

import numpy as np

from .config import load_config
from .connector import connect
from .errors import (ConfigError, InfeasibleEdgeError,
                     NumericalInstabilityError, SamplingError)
from .roadmap import build_graph, search_path
from .serialize import (load_graph, load_map, save_graph, save_path_report)
from .plotting import save_svg, write_moments_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NO_PATH = 3
EXIT_NUMERICAL = 4

WORKERS_ENV = "COVPLAN_WORKERS"


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; the contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _resolve_workers(args, cfg) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}")
        if value < 1:
            raise ConfigError(f"{WORKERS_ENV} must be positive, got {value}")
        return value
    return cfg.workers


def _require_beliefs(cfg):
    if cfg.start is None or cfg.goal is None:
        raise ConfigError("config must define both start and goal beliefs")
    beta = cfg.sampler.error_fraction
    return cfg.start.build(0, beta), cfg.goal.build(1, beta)


def cmd_build_graph(args) -> int:
    cfg = load_config(args.config)
    _, sdf_map = load_map(args.map)
    start, goal = _require_beliefs(cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    workers = _resolve_workers(args, cfg)

    graph = build_graph(cfg.model.build(), sdf_map, cfg.collision.build(),
                        cfg.connector.build(), cfg.sampler.build(),
                        cfg.grid.build(), alpha, cfg.n_samples, seed,
                        start, goal, workers=workers)
    save_graph(graph, args.out)
    meta = graph.metadata
    print(f"nodes={len(graph.nodes)} edges={len(graph.edges)} "
          f"attempted={meta['attempted_edges']} "
          f"build_seconds={meta['build_seconds']:.3f} "
          f"per_edge_mean={meta['per_edge_mean_seconds']:.3f} "
          f"per_edge_max={meta['per_edge_max_seconds']:.3f}")
    if not graph.edges:
        print("warning: no edges retained; graph is disconnected",
              file=sys.stderr)
        return EXIT_NO_PATH
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = load_config(args.config) if args.config else None
    graph = load_graph(args.graph)
    alpha = args.alpha
    if alpha is None:
        alpha = graph.metadata.get("alpha", cfg.alpha if cfg else 0.2)
    t0 = time.monotonic()
    result = search_path(graph, args.start_id, args.goal_id, alpha)
    wall = time.monotonic() - t0
    if not result.found:
        print(f"no-path: {result.reason}", file=sys.stderr)
        return EXIT_NO_PATH

    from .grid import TimeGrid
    if cfg is not None:
        grid = cfg.grid.build()
    else:
        # infer dt from any edge's knot count and a unit horizon
        steps = result.edges[0].trajectory.xbar.shape[0] - 1 if result.edges else 1
        grid = TimeGrid(1.0, max(steps, 2))
    save_path_report(result, grid, alpha, args.out, wall_seconds=wall)
    print(f"path nodes: {' '.join(str(i) for i in result.node_ids)}")
    print(f"total={result.total_cost:.6g} control={result.control_cost:.6g} "
          f"hinge={result.hinge_cost:.6g} entropy={result.entropy_cost:.6g} "
          f"alpha={alpha:g}")
    return EXIT_OK


def cmd_steer_edge(args) -> int:
    cfg = load_config(args.config)
    _, sdf_map = load_map(args.map)
    start, goal = _require_beliefs(cfg)
    model = cfg.model.build()
    grid = cfg.grid.build()

    result = connect(model, sdf_map, cfg.collision.build(),
                     cfg.connector.build(), grid,
                     start.mean, start.Sigma, start.P0,
                     goal.mean, goal.Sigma)
    traj = result.trajectory
    base = args.out[:-5] if args.out.endswith(".json") else args.out

    from .serialize import _dump, _traj_to_dict, SCHEMA_VERSION
    _dump({"schema_version": SCHEMA_VERSION,
           "converged": result.converged,
           "iterations": result.iterations,
           "wall_seconds": result.wall_seconds,
           "trajectory": _traj_to_dict(traj)}, base + ".json")
    lines = ["iteration,hinge_integral,mean_change,"
             "terminal_mean_residual,terminal_cov_residual"]
    for rec in result.history:
        lines.append(f"{rec.iteration},{rec.hinge_integral:.17g},"
                     f"{rec.mean_change:.17g},"
                     f"{rec.terminal_mean_residual:.17g},"
                     f"{rec.terminal_cov_residual:.17g}")
    with open(base + "_convergence.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"iterations={result.iterations} converged={result.converged} "
          f"wall_seconds={result.wall_seconds:.3f}")
    return EXIT_OK


def _plot_segments(args):
    from .serialize import _load
    data = _load(args.input, "plot input")
    if "edges" in data and "nodes" in data:        # graph file
        segments = [{"xbar": np.asarray(e["trajectory"]["xbar"]),
                     "Sigma": np.asarray(e["trajectory"]["Sigma"]),
                     "P": np.asarray(e["trajectory"]["P"])}
                    for e in data["edges"]]
        dt = 1.0 / max(segments[0]["xbar"].shape[0] - 1, 1) if segments else 1.0
    elif "knots" in data:                          # path report
        knots = data["knots"]
        segments = [{"xbar": np.asarray(knots["xbar"]),
                     "Sigma": np.asarray(knots["Sigma"]),
                     "P": np.asarray(knots["P"])}]
        ts = knots.get("t", [])
        dt = ts[1] - ts[0] if len(ts) > 1 else 1.0
    elif "trajectory" in data:                     # steered edge
        t = data["trajectory"]
        segments = [{"xbar": np.asarray(t["xbar"]),
                     "Sigma": np.asarray(t["Sigma"]),
                     "P": np.asarray(t["P"])}]
        dt = 1.0 / max(segments[0]["xbar"].shape[0] - 1, 1)
    else:
        raise ConfigError("plot input is neither a graph, path, nor edge file")
    if not segments:
        raise ConfigError("plot input contains no trajectories")
    return segments, dt


def cmd_plot(args) -> int:
    segments, dt = _plot_segments(args)
    obstacles = None
    bounds = None
    if args.map:
        obstacles, sdf_map = load_map(args.map)
        bounds = (sdf_map.origin[:2], sdf_map.upper[:2])

    n = segments[0]["xbar"].shape[1]
    want_svg = args.out.endswith(".svg")
    base = args.out[:-4] if want_svg else args.out
    csv_path = base + ".csv" if not base.endswith(".csv") else base
    write_moments_csv(segments, dt, csv_path)
    if want_svg:
        if n != 4:
            print("warning: SVG output needs a 2D scene; wrote CSV only",
                  file=sys.stderr)
        else:
            save_svg(segments, args.out, obstacles=obstacles, bounds=bounds,
                     ellipse_stride=args.ellipse_stride)
    return EXIT_OK


def make_parser() -> _Parser:
    parser = _Parser(prog="covplan",
                     description="Belief roadmap planning under uncertainty")
    sub = parser.add_subparsers(dest="command", required=True)

    bg = sub.add_parser("build-graph", help="sample nodes and steer edges")
    bg.add_argument("--config", required=True)
    bg.add_argument("--map", required=True)
    bg.add_argument("--out", required=True)
    bg.add_argument("--seed", type=int)
    bg.add_argument("--alpha", type=float)
    bg.add_argument("--workers", type=int)
    bg.set_defaults(func=cmd_build_graph)

    pl = sub.add_parser("plan", help="search a built graph")
    pl.add_argument("--graph", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--config")
    pl.add_argument("--alpha", type=float)
    pl.add_argument("--start-id", type=int, default=0)
    pl.add_argument("--goal-id", type=int, default=1)
    pl.set_defaults(func=cmd_plan)

    se = sub.add_parser("steer-edge", help="connect two beliefs directly")
    se.add_argument("--config", required=True)
    se.add_argument("--map", required=True)
    se.add_argument("--out", required=True)
    se.set_defaults(func=cmd_steer_edge)

    pt = sub.add_parser("plot", help="emit SVG/CSV from a graph or path file")
    pt.add_argument("input")
    pt.add_argument("--out", required=True)
    pt.add_argument("--map")
    pt.add_argument("--ellipse-stride", type=int, default=5)
    pt.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleEdgeError, SamplingError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalInstabilityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
