"""Iterative edge connector: proximal blending of linearized covariance
steering subproblems with output-feedback (EKF) covariance bookkeeping.

One call connects two Gaussian beliefs: it alternates (a) propagating the
current closed-loop nominal, (b) running the estimation-error Riccati
equation along it, (c) expanding the hinge collision cost to quadratic
weights, and (d) solving the blended linear steering subproblem, folding
the resulting gains back into the closed loop.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import drift_jacobian_path, linearize_along, measurement_jacobian
from .errors import InfeasibleEdgeError, NumericalInstabilityError
from .sdf import hinge_cost_path
from .steering import (BoundaryMoments, LqDrivingTerms, _integrate_joint,
                       _sym, propagate_affine, solve_linear_steering)


@dataclass(frozen=True)
class ConnectorParams:
    """Outer-iteration knobs.

    ``step_size`` is the proximal blending weight; ``tolerance`` is the
    max-knot nominal mean change below which iteration stops early.
    ``innovation_noise`` switches the subproblem's diffusion from the
    process intensity to the filter innovation intensity P H' R^-1 H P.
    """

    step_size: float = 0.001
    max_iterations: int = 50
    tolerance: float = 1e-4
    innovation_noise: bool = False

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")


@dataclass
class TrajectoryDistribution:
    """Time-gridded second-order statistics and policy for one edge.

    ``K``/``d`` map states to inputs for the total accumulated feedback
    (u = K x + d reproduces the converged closed loop on top of the model
    drift). ``Sigma = Sigma_est + P`` holds at every knot by construction.
    """

    xbar: np.ndarray        # (N+1, n)
    Sigma: np.ndarray       # (N+1, n, n) true-state covariance
    P: np.ndarray           # (N+1, n, n) estimation-error covariance
    Sigma_est: np.ndarray   # (N+1, n, n) estimated-state covariance
    K: np.ndarray           # (N+1, p, n)
    d: np.ndarray           # (N+1, p)
    A_cl: np.ndarray        # (N+1, n, n) closed-loop drift matrix
    a_cl: np.ndarray        # (N+1, n) closed-loop drift offset


@dataclass
class IterationRecord:
    iteration: int
    hinge_integral: float
    mean_change: float
    terminal_mean_residual: float
    terminal_cov_residual: float


@dataclass
class EdgeConnectionResult:
    trajectory: TrajectoryDistribution
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    wall_seconds: float = 0.0


def ekf_riccati(model, nominal: np.ndarray, P0: np.ndarray, grid) -> np.ndarray:
    """Estimation-error covariance along a nominal trajectory.

    Integrates Pdot = F P + P F' + eps B B' - P H' R^-1 H P with F, H the
    model Jacobians at the nominal (linearly interpolated at half steps).
    A model without a sensor drops the update term.
    """
    nominal = np.asarray(nominal, dtype=float)
    N1, n = nominal.shape
    N = N1 - 1
    dt = grid.horizon / N

    F = drift_jacobian_path(model, nominal)
    B = model.input_matrix()
    BQB = model.epsilon * (B @ B.T)

    if model.observation is not None:
        Rinv = np.linalg.inv(model.observation.R)
        H = np.stack([measurement_jacobian(model, x) for x in nominal])
        HRH = np.swapaxes(H, -1, -2) @ Rinv @ H
    else:
        HRH = np.zeros((N1, n, n))

    P, ok = _kernels.ekf_prop(
        np.ascontiguousarray(F), np.ascontiguousarray(HRH),
        np.ascontiguousarray(BQB),
        np.ascontiguousarray(_sym(np.asarray(P0, dtype=float))), dt)
    if not ok:
        raise NumericalInstabilityError(
            "estimation-error covariance diverged along the nominal")
    w = np.linalg.eigvalsh(P)
    if np.any(w[:, 0] < -1e-10 * np.maximum(1.0, w[:, -1])):
        raise NumericalInstabilityError(
            "estimation-error covariance lost positive semidefiniteness")
    return P


def build_quadratic_weights(sdf_map, cparams, nominal: np.ndarray,
                            eta: float, dim: int):
    """Quadratic expansion of the hinge cost around the nominal path.

    Collects the Gauss-Newton model of the collision cost into the
    1/2 x'Qx + x'r form expected by the steering subproblem, scaled by the
    proximal weight eta / (1 + eta).
    """
    V, g, gn, _ = hinge_cost_path(sdf_map, cparams, nominal, dim)
    w = eta / (1.0 + eta)
    Q = w * gn
    r = w * (g - np.einsum("kij,kj->ki", gn, nominal))
    return Q, r


def propagate_nominal(A, a, model, m0, Sigma0, grid, diffusion=None):
    """Mean and covariance under knot-frozen closed-loop coefficients.

    ``diffusion`` overrides the default process intensity eps B B' (used
    when the subproblems run on the innovation intensity instead, so the
    recorded residuals track the same covariance the subproblem steers).
    """
    N1 = A.shape[0]
    if diffusion is None:
        B = model.input_matrix()
        BBT = model.epsilon * (B @ B.T)
        diffusion = np.broadcast_to(BBT, (N1,) + BBT.shape)
    return propagate_affine(A, np.asarray(a, dtype=float), diffusion, m0,
                            Sigma0, grid.dt)


def _straight_line_nominal(m0, mT, model, grid):
    """Positions linear in time; velocities the constant difference rate."""
    d = model.dim
    N1 = grid.steps + 1
    tau = np.linspace(0.0, 1.0, N1)[:, None]
    pos = (1 - tau) * m0[:d][None, :] + tau * mT[:d][None, :]
    vel = np.broadcast_to((mT[:d] - m0[:d]) / grid.horizon, (N1, d))
    return np.hstack([pos, vel])


def _chol_ok(S, tol=1e-10):
    w = np.linalg.eigvalsh(_sym(S))
    return bool(np.all(np.isfinite(w)) and w[0] > tol * max(1.0, abs(w[-1])))


def connect(model, sdf_map, cparams, params: ConnectorParams, grid,
            m0, Sigma0, P0, mT, SigmaT) -> EdgeConnectionResult:
    """Steer belief (m0, Sigma0) with estimator prior P0 to (mT, SigmaT).

    Raises InfeasibleEdgeError when Sigma0 - P0 or SigmaT - P(T) fails to
    be positive definite, or when a steering subproblem is insoluble.
    """
    t_start = time.monotonic()
    m0 = np.asarray(m0, dtype=float)
    mT = np.asarray(mT, dtype=float)
    Sigma0 = _sym(np.asarray(Sigma0, dtype=float))
    SigmaT = _sym(np.asarray(SigmaT, dtype=float))
    P0 = _sym(np.asarray(P0, dtype=float))
    n, dim = model.n, model.dim
    N1 = grid.steps + 1
    eta = params.step_size

    Sig_hat0 = Sigma0 - P0
    if not _chol_ok(Sig_hat0):
        raise InfeasibleEdgeError(
            "initial covariance is not larger than the estimation prior")
    if not _chol_ok(SigmaT):
        raise InfeasibleEdgeError("goal covariance is not SPD")

    B1 = model.input_matrix()
    B = np.broadcast_to(B1, (N1,) + B1.shape).copy()

    nominal0 = _straight_line_nominal(m0, mT, model, grid)
    A_k, a_k = linearize_along(model, nominal0, grid)

    xbar_prev = None
    policy = None
    terms = None
    warm = None
    jac_cache = {}
    history = []
    converged = False
    iterations = 0

    diffusion_prev = None
    for k in range(params.max_iterations):
        iterations = k + 1
        xbar_k, Sighat_k = propagate_nominal(A_k, a_k, model, m0, Sig_hat0,
                                             grid, diffusion=diffusion_prev)
        P_k = ekf_riccati(model, xbar_k, P0, grid)

        Sig_hatT = SigmaT - P_k[-1]
        if not _chol_ok(Sig_hatT):
            raise InfeasibleEdgeError(
                "terminal covariance below estimation error: goal covariance "
                "must dominate the filter error covariance at the horizon")

        Ahat, ahat = linearize_along(model, xbar_k, grid)
        Q_k, r_k = build_quadratic_weights(sdf_map, cparams, xbar_k, eta, dim)
        A_blend = (A_k + eta * Ahat) / (1.0 + eta)
        a_blend = (a_k + eta * ahat) / (1.0 + eta)

        diffusion = None
        if params.innovation_noise and model.observation is not None:
            Rinv = np.linalg.inv(model.observation.R)
            H = np.stack([measurement_jacobian(model, xbar_k[i]) for i in range(N1)])
            gain = P_k @ np.swapaxes(H, -1, -2) @ Rinv
            diffusion = gain @ model.observation.R @ np.swapaxes(gain, -1, -2)

        terms = LqDrivingTerms(A_blend, a_blend, B, Q_k, r_k, model.epsilon,
                               diffusion=diffusion)
        diffusion_prev = terms.diffusion if params.innovation_noise else None
        boundary = BoundaryMoments(m0, mT, Sig_hat0, Sig_hatT)
        policy = solve_linear_steering(terms, boundary, grid, warm_start=warm,
                                       jac_cache=jac_cache)
        warm = policy.Pi[0]

        A_k = A_blend + B @ policy.K
        a_k = a_blend + np.einsum("knp,kp->kn", B, policy.d)

        hinge_vals, _, _, _ = hinge_cost_path(sdf_map, cparams, xbar_k, dim)
        hinge_integral = float(np.sum(hinge_vals[:-1]) * grid.dt)
        mean_change = (float(np.max(np.linalg.norm(xbar_k - xbar_prev, axis=1)))
                       if xbar_prev is not None else float("inf"))
        SigT_k = Sighat_k[-1] + P_k[-1]
        history.append(IterationRecord(
            iteration=k,
            hinge_integral=hinge_integral,
            mean_change=mean_change,
            terminal_mean_residual=float(np.linalg.norm(xbar_k[-1] - mT)),
            terminal_cov_residual=float(np.linalg.norm(SigT_k - SigmaT)
                                        / np.linalg.norm(SigmaT)),
        ))
        xbar_prev = xbar_k
        if params.tolerance > 0 and mean_change < params.tolerance:
            converged = True
            break
    else:
        converged = params.tolerance == 0 or (
            history[-1].mean_change < params.tolerance if history else False)

    # final statistics from the last subproblem's stage-consistent flow
    out = _integrate_joint(terms, policy.Pi[0], Sig_hat0, grid.dt,
                           m0=m0, xs0=policy.xbar_opt[0], lam0=policy.lam[0],
                           store=True)
    xbar_f, Sighat_f = out["xbar"], out["Sigma"]
    P_f = ekf_riccati(model, xbar_f, P0, grid)
    Sigma_f = Sighat_f + P_f
    for i in range(N1):
        if not _chol_ok(Sighat_f[i]):
            raise InfeasibleEdgeError(
                "estimated-state covariance lost positive definiteness "
                "along the edge")

    # total executable feedback: u = K x + d reproducing A_k, a_k on top of
    # the model linearization along the final nominal
    Ahat_f, ahat_f = linearize_along(model, xbar_f, grid)
    Bpinv = np.linalg.pinv(B1)
    K_tot = np.einsum("pn,knm->kpm", Bpinv, A_k - Ahat_f)
    d_tot = np.einsum("pn,kn->kp", Bpinv, a_k - ahat_f)

    traj = TrajectoryDistribution(
        xbar=xbar_f, Sigma=Sigma_f, P=P_f, Sigma_est=Sighat_f,
        K=K_tot, d=d_tot, A_cl=A_k, a_cl=a_k)
    return EdgeConnectionResult(
        trajectory=traj, converged=converged, iterations=iterations,
        history=history, wall_seconds=time.monotonic() - t_start)
