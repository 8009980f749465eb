import numpy as np
import pytest

from covplan import (BoundaryMoments, InfeasibleEdgeError, LqDrivingTerms,
                     TimeGrid, propagate_closed_loop, solve_linear_steering)
from covplan.steering import (propagate_affine, solve_coupled_riccati,
                              solve_mean_bvp, _integrate_joint)

from conftest import random_spd
from oracles import dense_mean_qp


def double_integrator_terms(grid, epsilon=0.01, Q=None, r=None, n=4, p=2):
    N1 = grid.n_knots
    A1 = np.zeros((n, n))
    A1[:p, p:] = np.eye(p)
    A = np.broadcast_to(A1, (N1, n, n)).copy()
    a = np.zeros((N1, n))
    B1 = np.zeros((n, p))
    B1[p:] = np.eye(p)
    B = np.broadcast_to(B1, (N1, n, p)).copy()
    Q = np.zeros((N1, n, n)) if Q is None else Q
    r = np.zeros((N1, n)) if r is None else r
    return LqDrivingTerms(A, a, B, Q, r, epsilon)


class TestMeanBvp:
    def test_terminal_mean_hit(self):
        grid = TimeGrid(1.0, 50)
        terms = double_integrator_terms(grid)
        m0 = np.array([0.0, 0.0, 0.0, 0.0])
        mT = np.array([1.0, -2.0, 0.0, 0.0])
        xbar, v, lam = solve_mean_bvp(terms, m0, mT, grid)
        np.testing.assert_allclose(xbar[0], m0, atol=1e-12)
        np.testing.assert_allclose(xbar[-1], mT, atol=1e-8)

    def test_matches_dense_qp_oracle(self):
        """The Hamiltonian-system mean matches a trapezoidal direct
        transcription solved through its KKT system."""
        grid = TimeGrid(1.0, 200)
        rng = np.random.default_rng(4)
        N1 = grid.n_knots
        # time-varying PSD state weight and linear term
        Qk = np.zeros((N1, 4, 4))
        rk = np.zeros((N1, 4))
        for i in range(N1):
            t = i / (N1 - 1)
            M = np.diag([1.0 + t, 0.5, 0.2 * t, 0.1])
            Qk[i] = M
            rk[i] = np.array([np.sin(3 * t), t, -t * t, 0.3])
        terms = double_integrator_terms(grid, Q=Qk, r=rk)
        m0 = rng.normal(size=4)
        mT = rng.normal(size=4)
        xbar, _, _ = solve_mean_bvp(terms, m0, mT, grid)
        oracle = dense_mean_qp(terms.A, terms.a, terms.B, Qk, rk, m0, mT,
                               grid.horizon)
        scale = np.abs(oracle).max()
        assert np.abs(xbar - oracle).max() <= 2e-4 * (1.0 + scale)

    def test_uncontrollable_raises(self):
        grid = TimeGrid(1.0, 20)
        terms = double_integrator_terms(grid)
        terms.B[:] = 0.0
        terms.BBT[:] = 0.0
        with pytest.raises(InfeasibleEdgeError):
            solve_mean_bvp(terms, np.zeros(4), np.ones(4), grid)


class TestCovarianceSteering:
    def test_terminal_covariance_contract(self):
        grid = TimeGrid(1.0, 50)
        terms = double_integrator_terms(grid)
        rng = np.random.default_rng(0)
        S0 = random_spd(rng, 4)
        ST = random_spd(rng, 4)
        boundary = BoundaryMoments(np.zeros(4), np.ones(4), S0, ST)
        policy = solve_linear_steering(terms, boundary, grid)
        x, S = propagate_closed_loop(terms, policy, np.zeros(4), S0, grid)
        assert np.linalg.norm(S[-1] - ST) / np.linalg.norm(ST) <= 1e-6
        assert np.linalg.norm(x[-1] - np.ones(4)) <= 1e-8 * (1 + 2.0)

    def test_riccati_ode_residual_fourth_order(self):
        """Halving dt shrinks the terminal covariance mismatch of a
        fixed-Pi(0) integration by at least 8x against a 10x-finer
        reference (classical RK4 order on smooth coefficients)."""
        n, p = 4, 2
        rng = np.random.default_rng(7)
        Pi0 = random_spd(rng, n, scale=0.1, floor=0.2)
        S0 = random_spd(rng, n)

        def run(steps):
            grid = TimeGrid(1.0, steps)
            N1 = grid.n_knots
            # constant A, linear-in-t Q: the midpoint coefficient average
            # is exact, so the integrator keeps its classical order
            Qk = np.zeros((N1, n, n))
            for i in range(N1):
                t = i / (N1 - 1)
                Qk[i] = (0.5 + t) * np.diag([1.0, 0.8, 0.3, 0.2])
            terms = double_integrator_terms(grid, Q=Qk)
            PiT, SigT, div = _integrate_joint(terms, Pi0, S0, grid.dt)
            assert not div
            return SigT

        ref = run(500)
        e1 = np.linalg.norm(run(25) - ref)
        e2 = np.linalg.norm(run(50) - ref)
        assert e1 / e2 >= 8.0

    def test_warm_start_and_jac_cache_agree_with_cold(self):
        grid = TimeGrid(1.0, 50)
        terms = double_integrator_terms(grid)
        rng = np.random.default_rng(3)
        S0 = random_spd(rng, 4)
        ST = random_spd(rng, 4)
        Pi_cold = solve_coupled_riccati(terms, S0, ST, grid)
        cache = {}
        Pi_a = solve_coupled_riccati(terms, S0, ST, grid, jac_cache=cache)
        Pi_b = solve_coupled_riccati(terms, S0, ST, grid,
                                     warm_start=Pi_a[0], jac_cache=cache)
        for Pi in (Pi_a, Pi_b):
            assert np.linalg.norm(Pi[0] - Pi_cold[0]) <= 1e-6 * (
                1 + np.linalg.norm(Pi_cold[0]))

    def test_non_spd_boundary_rejected(self):
        with pytest.raises(InfeasibleEdgeError):
            BoundaryMoments(np.zeros(4), np.zeros(4),
                            -np.eye(4), np.eye(4))

    def test_unactuated_covariance_infeasible(self):
        """Without actuation the covariance evolves autonomously, so a
        generic SPD target is unreachable and the shooting reports it."""
        grid = TimeGrid(1.0, 30)
        terms = double_integrator_terms(grid)
        terms.B[:] = 0.0
        terms.BBT[:] = 0.0
        terms.diffusion[:] = 0.0
        rng = np.random.default_rng(11)
        S0 = random_spd(rng, 4)
        ST = random_spd(rng, 4, scale=0.3, floor=0.3)
        with pytest.raises(InfeasibleEdgeError):
            solve_coupled_riccati(terms, S0, ST, grid)


class TestPropagation:
    def test_affine_covariance_matches_lyapunov_series(self):
        """Constant-coefficient propagation matches the closed form
        Sigma(t) = e^{At} S0 e^{A't} + int_0^t e^{As} D e^{A's} ds."""
        from scipy.linalg import expm
        grid = TimeGrid(1.0, 200)
        n = 4
        rng = np.random.default_rng(9)
        A1 = rng.normal(size=(n, n)) * 0.5
        D1 = random_spd(rng, n, scale=0.05)
        S0 = random_spd(rng, n)
        N1 = grid.n_knots
        A = np.broadcast_to(A1, (N1, n, n)).copy()
        a = np.zeros((N1, n))
        D = np.broadcast_to(D1, (N1, n, n)).copy()
        x, S = propagate_affine(A, a, D, np.zeros(n), S0, grid.dt)

        # closed form via the doubled system exp([[A, D], [0, -A']] t)
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = A1
        M[:n, n:] = D1
        M[n:, n:] = -A1.T
        E = expm(M * grid.horizon)
        Phi = expm(A1 * grid.horizon)
        S_exact = Phi @ S0 @ Phi.T + E[:n, n:] @ Phi.T
        np.testing.assert_allclose(S[-1], S_exact, rtol=1e-8, atol=1e-10)

    def test_affine_mean_matches_expm(self):
        from scipy.linalg import expm
        grid = TimeGrid(1.0, 100)
        n = 4
        rng = np.random.default_rng(10)
        A1 = rng.normal(size=(n, n)) * 0.5
        N1 = grid.n_knots
        A = np.broadcast_to(A1, (N1, n, n)).copy()
        a = np.zeros((N1, n))
        D = np.zeros((N1, n, n))
        x0 = rng.normal(size=n)
        x, _ = propagate_affine(A, a, D, x0, np.eye(n), grid.dt)
        np.testing.assert_allclose(x[-1], expm(A1) @ x0, rtol=1e-8)

    def test_closed_loop_repropagation_reproduces_policy_mean(self):
        """Property: re-propagating from the boundary with the returned
        policy tracks the optimal mean to rounding, for several random
        boundary pairs."""
        grid = TimeGrid(1.0, 50)
        terms = double_integrator_terms(grid)
        rng = np.random.default_rng(21)
        for _ in range(5):
            m0, mT = rng.normal(size=4), rng.normal(size=4)
            S0, ST = random_spd(rng, 4), random_spd(rng, 4)
            boundary = BoundaryMoments(m0, mT, S0, ST)
            policy = solve_linear_steering(terms, boundary, grid)
            x, S = propagate_closed_loop(terms, policy, m0, S0, grid)
            assert np.abs(x - policy.xbar_opt).max() <= 1e-9
