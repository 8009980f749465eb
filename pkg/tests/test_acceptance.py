"""End-to-end acceptance tests.

Each test is runnable standalone and states its tolerance inline. Oracles
come from tests/oracles.py (independent discretizations and brute force).
"""

import json
import time

import numpy as np
import pytest

from covplan import (BeliefEdge, BeliefGraph, BeliefNode, BoundaryMoments,
                     Box, CollisionCostParams, ConnectorParams,
                     DoubleIntegrator, ObstacleSet, SamplerParams, Sphere,
                     TimeGrid, build_graph, build_sdf, collision_free,
                     connect, edge_cost, ekf_riccati, position_observation,
                     position_variance, propagate_closed_loop, sample_belief,
                     search_path, solve_linear_steering)
from covplan import _kernels
from covplan.cli import main
from covplan.sdf import hinge_cost_path
from covplan.serialize import strip_timing

from conftest import random_spd
from oracles import (brute_force_shortest, discrete_kalman_covariance,
                     euler_maruyama_ekf_rollouts)
from test_steering import double_integrator_terms


# ---------------------------------------------------------------------------
# 1. linear steering exactness
# ---------------------------------------------------------------------------

def test_01_linear_steering_exactness(grid50):
    """20 random SPD boundary pairs on the 2D double integrator: terminal
    covariance relative Frobenius error <= 1e-6, terminal mean error
    <= 1e-8 * (1 + ||mT||), < 1 s per solve at N = 50."""
    terms = double_integrator_terms(grid50)
    rng = np.random.default_rng(42)
    for _ in range(20):
        m0 = rng.normal(size=4)
        mT = rng.normal(size=4)
        S0 = random_spd(rng, 4)
        ST = random_spd(rng, 4)
        t0 = time.monotonic()
        policy = solve_linear_steering(terms, BoundaryMoments(m0, mT, S0, ST),
                                       grid50)
        x, S = propagate_closed_loop(terms, policy, m0, S0, grid50)
        elapsed = time.monotonic() - t0
        cov_err = np.linalg.norm(S[-1] - ST) / np.linalg.norm(ST)
        mean_err = np.linalg.norm(x[-1] - mT)
        assert cov_err <= 1e-6
        assert mean_err <= 1e-8 * (1.0 + np.linalg.norm(mT))
        assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2. Riccati integration order
# ---------------------------------------------------------------------------

def test_02_riccati_fourth_order():
    """The feedback matrix returned by the shooting solve satisfies its ODE
    at 4th order: re-integrating the coupled system from the solved initial
    condition, halving dt reduces the terminal covariance mismatch >= 8x."""
    from covplan.steering import _integrate_joint, solve_coupled_riccati
    rng = np.random.default_rng(1)
    S0 = random_spd(rng, 4)
    ST = random_spd(rng, 4)
    Pi = solve_coupled_riccati(double_integrator_terms(TimeGrid(1.0, 25)),
                               S0, ST, TimeGrid(1.0, 25))
    Pi0 = Pi[0]

    def terminal_sigma(steps):
        grid = TimeGrid(1.0, steps)
        terms = double_integrator_terms(grid)
        _, SigT, div = _integrate_joint(terms, Pi0, S0, grid.dt)
        assert not div
        return SigT

    ref = terminal_sigma(1600)
    e1 = np.linalg.norm(terminal_sigma(25) - ref)
    e2 = np.linalg.norm(terminal_sigma(50) - ref)
    assert e1 / e2 >= 8.0


# ---------------------------------------------------------------------------
# 3. gradient checks on 1,000 random states
# ---------------------------------------------------------------------------

def test_03_dynamics_jacobians_finite_differences():
    rng = np.random.default_rng(2)
    for model, count in ((DoubleIntegrator(dim=2, drag_coeff=0.7), 500),
                         (DoubleIntegrator(dim=3, drag_coeff=0.3), 500)):
        for _ in range(count):
            x = rng.normal(size=model.n) * 2.0
            J = model.drift_jacobian(0.0, x)
            h = 1e-6
            for j in range(model.n):
                e = np.zeros(model.n)
                e[j] = h
                fd = (model.drift(0.0, x + e) - model.drift(0.0, x - e)) / (2 * h)
                denom = np.maximum(np.abs(fd), 1.0)
                assert np.max(np.abs(J[:, j] - fd) / denom) < 1e-4


def test_03_hinge_gradients_finite_differences(five_box_map):
    params = CollisionCostParams(margin=0.5, weight=2.0)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-5.0, 5.0, size=(1000, 2))
    states = np.hstack([pts, rng.normal(size=(1000, 2))])
    _, grads, _, _ = hinge_cost_path(five_box_map, params, states, 2)
    h = 1e-7
    for k in range(2):
        e = np.zeros(4)
        e[k] = h
        Vp, _, _, _ = hinge_cost_path(five_box_map, params, states + e, 2)
        Vm, _, _, _ = hinge_cost_path(five_box_map, params, states - e, 2)
        fd = (Vp - Vm) / (2 * h)
        # relative where the gradient is meaningful, absolute at the floor
        rel = np.abs(grads[:, k] - fd) / np.maximum(np.abs(fd), 1e-4)
        assert rel.max() < 1e-4
    # velocity entries carry no collision gradient
    np.testing.assert_array_equal(grads[:, 2:], 0.0)


# ---------------------------------------------------------------------------
# 4. EKF Riccati vs discrete Kalman recursion
# ---------------------------------------------------------------------------

def test_04_ekf_matches_discrete_kalman_scalar():
    """dx = -0.5 x dt + sqrt(q) dW observed with intensity r: the continuous
    Riccati solution is the dt -> 0 limit of the discrete Kalman recursion
    (oracle error halves when its dt halves)."""
    F = np.full((51, 1, 1), -0.5)
    H = np.ones((1, 1))
    q, r, P0 = 0.3, 0.1, np.array([[0.4]])
    HRH = np.broadcast_to(H.T @ H / r, (51, 1, 1)).copy()
    P, ok = _kernels.ekf_prop(F, HRH, q * np.eye(1), P0, 1.0 / 50)
    assert ok
    e1 = abs(P[-1, 0, 0] - discrete_kalman_covariance(
        F[0], H, q * np.eye(1), r * np.eye(1), P0, 1.0, 1000)[0, 0])
    e2 = abs(P[-1, 0, 0] - discrete_kalman_covariance(
        F[0], H, q * np.eye(1), r * np.eye(1), P0, 1.0, 2000)[0, 0])
    assert e1 / e2 == pytest.approx(2.0, rel=0.25)


def test_04_ekf_matches_discrete_kalman_four_state(grid50):
    model = DoubleIntegrator(dim=2, drag_coeff=0.0, epsilon=0.05,
                             observation=position_observation(2, 0.02))
    nominal = np.zeros((grid50.n_knots, 4))
    P0 = np.diag([0.3, 0.3, 0.1, 0.1])
    P = ekf_riccati(model, nominal, P0, grid50)
    F = model.drift_jacobian(0.0, np.zeros(4))
    B = model.input_matrix()
    Qc = model.epsilon * (B @ B.T)
    H, R = model.observation.C, model.observation.R
    e1 = np.linalg.norm(P[-1] - discrete_kalman_covariance(
        F, H, Qc, R, P0, 1.0, 1000))
    e2 = np.linalg.norm(P[-1] - discrete_kalman_covariance(
        F, H, Qc, R, P0, 1.0, 2000))
    assert e1 / e2 == pytest.approx(2.0, rel=0.25)


# ---------------------------------------------------------------------------
# 5. single-obstacle connection with the drag model
# ---------------------------------------------------------------------------

def test_05_drag_obstacle_connection(drag_model, single_obstacle_map,
                                     obstacle_penalty, budget_params, grid50):
    """Proximal step 0.001, 50 iterations, 50 timesteps around one obstacle:
    collision-free mean, terminal residuals < 1e-3, final hinge integral
    < 1% of its initial value, < 5 s."""
    m0 = np.array([-2.0, 0.0, 0.0, 0.0])
    mT = np.array([2.0, 0.0, 0.0, 0.0])
    S0 = np.diag([0.2, 0.2, 0.05, 0.05])
    ST = np.diag([0.15, 0.15, 0.05, 0.05])
    t0 = time.monotonic()
    res = connect(drag_model, single_obstacle_map, obstacle_penalty,
                  budget_params, grid50, m0, S0, 0.25 * S0, mT, ST)
    elapsed = time.monotonic() - t0
    assert elapsed < 5.0
    assert res.iterations == 50
    assert collision_free(single_obstacle_map, obstacle_penalty,
                          res.trajectory.xbar, 2)
    last = res.history[-1]
    assert last.terminal_mean_residual < 1e-3
    assert last.terminal_cov_residual < 1e-3
    # the initial nominal (iteration 0) has no control authority and never
    # reaches the obstacle; the first steered iterate carries the initial
    # collision load
    hinge_initial = max(res.history[0].hinge_integral,
                        res.history[1].hinge_integral)
    assert hinge_initial > 0
    assert last.hinge_integral < 0.01 * hinge_initial


# ---------------------------------------------------------------------------
# 6. entropy-weight tradeoff on a two-corridor map
# ---------------------------------------------------------------------------

def _two_corridor_graph():
    """Calibrated scene: a thick wall pierced by a narrow tunnel (small
    node covariances) versus an open detour over the wall (large node
    covariances). The route crossover sits near alpha = 0.4."""
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
    routes = [(0, 2), (2, 3), (3, 1),    # narrow tunnel
              (0, 4), (4, 1)]            # wide detour
    edges = []
    for src, dst in routes:
        a, b = nodes[src], nodes[dst]
        res = connect(model, sdf_map, cparams, conn, grid,
                      a.mean, a.Sigma, a.P0, b.mean, b.Sigma)
        assert collision_free(sdf_map, cparams, res.trajectory.xbar, 2)
        _, comps = edge_cost(res.trajectory, 0.0, grid, sdf_map, cparams)
        edges.append(BeliefEdge(source=src, target=dst,
                                trajectory=res.trajectory,
                                control_cost=comps["control"],
                                hinge_cost=comps["hinge"],
                                entropy_cost=comps["entropy"]))
    return BeliefGraph(nodes=nodes, edges=edges)


def test_06_alpha_tradeoff():
    graph = _two_corridor_graph()
    low = search_path(graph, 0, 1, alpha=0.2)
    high = search_path(graph, 0, 1, alpha=0.6)
    assert low.found and high.found
    assert low.node_ids != high.node_ids
    assert low.node_ids == [0, 2, 3, 1]     # tunnel at low entropy weight
    assert high.node_ids == [0, 4, 1]       # detour once entropy dominates
    assert high.entropy_cost < low.entropy_cost
    assert (high.control_cost + high.hinge_cost
            >= low.control_cost + low.hinge_cost)
    # over an alpha sweep the selected path's entropy cost never increases
    entropies = [search_path(graph, 0, 1, alpha=a).entropy_cost
                 for a in np.linspace(0.0, 1.0, 21)]
    assert np.all(np.diff(entropies) <= 1e-12)


# ---------------------------------------------------------------------------
# 7. graph-scale timing
# ---------------------------------------------------------------------------

def test_07_graph_build_2d_timing(single_obstacle_map, obstacle_penalty):
    model = DoubleIntegrator(dim=2, drag_coeff=0.0, epsilon=0.01,
                             observation=position_observation(2, 0.01))
    grid = TimeGrid(1.0, 50)
    conn = ConnectorParams(step_size=0.001, max_iterations=50, tolerance=1e-4)
    sp = SamplerParams(clearance=0.3, velocity_var=0.02, neighbor_count=3)
    S = np.diag([0.15, 0.15, 0.02, 0.02])
    start = BeliefNode(0, np.array([-4.0, -4.0, 0.0, 0.0]), S, 0.25 * S)
    goal = BeliefNode(1, np.array([4.0, 4.0, 0.0, 0.0]), S, 0.25 * S)
    t0 = time.monotonic()
    graph = build_graph(model, single_obstacle_map, obstacle_penalty, conn,
                        sp, grid, alpha=0.2, n_samples=28, seed=0,
                        start=start, goal=goal, workers=1)
    elapsed = time.monotonic() - t0
    assert len(graph.nodes) == 30
    assert 60 <= graph.metadata["attempted_edges"] <= 160   # ~90 directed
    assert elapsed <= 60.0
    assert len(graph.edges) > 0


def test_07_graph_build_3d_per_edge_time():
    obs = ObstacleSet((Sphere((0.0, 0.0, 0.0), 1.0),
                       Sphere((2.0, 2.0, 1.0), 0.8),
                       Sphere((-2.0, 1.5, -1.0), 0.8)))
    sdf_map = build_sdf(obs, (-5.0, -5.0, -5.0), 0.25, (41, 41, 41))
    model = DoubleIntegrator(dim=3, drag_coeff=0.0, epsilon=0.01,
                             observation=position_observation(3, 0.01))
    grid = TimeGrid(1.0, 50)
    conn = ConnectorParams(step_size=0.001, max_iterations=100,
                           tolerance=1e-4)
    sp = SamplerParams(clearance=0.3, velocity_var=0.02, neighbor_count=3)
    S = np.diag([0.15] * 3 + [0.02] * 3)
    start = BeliefNode(0, np.array([-3.5, -3.5, -3.5, 0.0, 0.0, 0.0]),
                       S, 0.25 * S)
    goal = BeliefNode(1, np.array([3.5, 3.5, 3.5, 0.0, 0.0, 0.0]),
                      S, 0.25 * S)
    graph = build_graph(model, sdf_map, CollisionCostParams(0.2, 3e5), conn,
                        sp, grid, alpha=0.2, n_samples=23, seed=0,
                        start=start, goal=goal, workers=1)
    assert len(graph.nodes) == 25
    assert graph.metadata["attempted_edges"] >= 80      # ~100 directed
    assert graph.metadata["per_edge_mean_seconds"] <= 5.0
    assert len(graph.edges) > 0


# ---------------------------------------------------------------------------
# 8. search optimality against enumeration
# ---------------------------------------------------------------------------

def test_08_search_matches_enumeration():
    from test_roadmap import cost_graph
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(100):
        m = int(rng.integers(2, 9))
        spec, seen = [], set()
        for _ in range(int(rng.integers(m, 4 * m))):
            s, d = rng.integers(0, m, size=2)
            if s == d or (s, d) in seen:
                continue
            seen.add((s, d))
            spec.append((int(s), int(d), float(rng.uniform(0.01, 10.0)),
                         0.0, 0.0))
        graph = cost_graph(m, spec)
        res = search_path(graph, 0, m - 1, alpha=0.0)
        best, _ = brute_force_shortest(m, [(s, d, c) for s, d, c, _, _ in spec],
                                       0, m - 1)
        if res.found:
            assert res.total_cost == best
            checked += 1
        else:
            assert np.isinf(best)
    assert checked >= 30     # enough solvable instances to be meaningful


# ---------------------------------------------------------------------------
# 9. sampler coverage
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("confidence", [0.90, 0.95, 0.99])
def test_09_sampler_coverage(five_box_map, confidence):
    """>= confidence of 100,000 Gaussian position draws fall within the
    node's obstacle clearance d_obs."""
    rng = np.random.default_rng(9)
    params = SamplerParams(confidence=confidence, clearance=0.3,
                           velocity_var=0.02)
    for _ in range(3):
        node = sample_belief(five_box_map, params, rng)
        d_obs, _, _ = five_box_map.value_grad(node.position(2))
        pvar = node.Sigma[0, 0]
        draws = rng.normal(scale=np.sqrt(pvar), size=(100_000, 2))
        frac = np.mean(np.linalg.norm(draws, axis=1) < float(d_obs))
        assert frac >= confidence


# ---------------------------------------------------------------------------
# 10. Monte-Carlo closed-loop validation
# ---------------------------------------------------------------------------

def test_10_monte_carlo_closed_loop(linear_model, empty_map, no_penalty,
                                    grid50):
    """10,000 Euler-Maruyama rollouts with a discrete EKF in the loop:
    terminal mean within 3 standard errors, covariance entries within 10%
    (scaled by sqrt(Sigma_ii Sigma_jj)) of the steered terminal covariance.

    The edge is steered with the innovation-driven estimate diffusion,
    which is the exact estimate-covariance dynamics for a linear system.
    """
    params = ConnectorParams(step_size=0.001, max_iterations=10,
                             tolerance=1e-5, innovation_noise=True)
    m0 = np.array([-2.0, 0.0, 0.0, 0.0])
    mT = np.array([2.0, 0.0, 0.0, 0.0])
    S0 = np.diag([0.2, 0.2, 0.05, 0.05])
    ST = np.diag([0.15, 0.15, 0.05, 0.05])
    P0 = 0.25 * S0
    res = connect(linear_model, empty_map, no_penalty, params, grid50,
                  m0, S0, P0, mT, ST)
    assert res.history[-1].terminal_mean_residual < 1e-3
    assert res.history[-1].terminal_cov_residual < 1e-3
    steered_ST = res.trajectory.Sigma[-1]

    x = euler_maruyama_ekf_rollouts(linear_model, res.trajectory, grid50,
                                    m0, S0, P0, 10_000, seed=0, substeps=10)
    emp_mean = x.mean(axis=0)
    emp_cov = np.cov(x.T)
    se = np.sqrt(np.diag(emp_cov) / x.shape[0])
    assert np.all(np.abs(emp_mean - mT) <= 3.0 * se)
    scale = np.sqrt(np.outer(np.diag(steered_ST), np.diag(steered_ST)))
    assert np.max(np.abs(emp_cov - steered_ST) / scale) <= 0.10


# ---------------------------------------------------------------------------
# 11. determinism across worker counts
# ---------------------------------------------------------------------------

def test_11_worker_count_determinism(tmp_path):
    from test_io_cli import full_config_dict, write_empty_map
    cfg = full_config_dict()
    cfg["n_samples"] = 3
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    write_empty_map(tmp_path / "map.json")

    outputs = []
    for workers in ("1", "3"):
        out = tmp_path / f"graph_w{workers}.json"
        code = main(["build-graph", "--config", str(tmp_path / "config.json"),
                     "--map", str(tmp_path / "map.json"), "--out", str(out),
                     "--seed", "11", "--workers", workers])
        assert code == 0
        data = strip_timing(json.loads(out.read_text()))
        outputs.append(json.dumps(data, sort_keys=True).encode())
    assert outputs[0] == outputs[1]
