"""Linear covariance steering on a uniform time grid.

Solves, for time-varying (A, a, B, Q, r) and diffusion intensity eps,

    min E int_0^T  1/2 ||u||^2 + 1/2 x'Qx + x'r  dt
    dx = (A x + a) dt + B (u dt + sqrt(eps) dW)
    x(0) ~ (m0, S0),   x(T) ~ (mT, ST)

in feedback form u*(t, x) = -B'Pi(t) (x - xbar*(t)) + v*(t). The mean
problem is a Pontryagin two-point boundary value problem solved through the
Hamiltonian transition matrix; the covariance boundary coupling is solved by
shooting on the symmetric initial condition Pi(0) with a damped Newton
iteration. Correctness is defined by the terminal moment match, which every
solve verifies.

Closed-loop propagation re-integrates Pi and the costate alongside the
moments (same RK4 stage arithmetic as the shooting residual), so the
terminal match survives propagation instead of being lost to knot-frozen
gain interpolation.

All per-knot arrays are stacked along axis 0 with shape (N+1, ...).
Integration is classical RK4; coefficients known only at knots are averaged
at step midpoints.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InfeasibleEdgeError, NumericalInstabilityError

_BLOWUP = 1.0e9


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _clamp_psd(Q, tol=1e-10):
    """Symmetrize and clamp eigenvalues at zero where needed."""
    Q = _sym(Q)
    out = Q.copy()
    for i in range(Q.shape[0]):
        if not Q[i].any():
            continue
        w, V = np.linalg.eigh(Q[i])
        if w[0] < -tol * max(1.0, abs(w[-1])):
            out[i] = (V * np.maximum(w, 0.0)) @ V.T
    return out


@dataclass
class LqDrivingTerms:
    """Per-knot coefficients of one linear steering subproblem.

    ``diffusion`` defaults to eps * B B' at each knot; an explicit array
    overrides it (used for the innovation-driven noise variant).
    """

    A: np.ndarray          # (N+1, n, n)
    a: np.ndarray          # (N+1, n)
    B: np.ndarray          # (N+1, n, p)
    Q: np.ndarray          # (N+1, n, n) PSD
    r: np.ndarray          # (N+1, n)
    epsilon: float
    diffusion: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.Q = _clamp_psd(np.asarray(self.Q, dtype=float))
        self.r = np.asarray(self.r, dtype=float)
        if self.epsilon < 0:
            raise ValueError("noise intensity must be nonnegative")
        self.BBT = self.B @ np.swapaxes(self.B, -1, -2)
        if self.diffusion is None:
            self.diffusion = self.epsilon * self.BBT
        else:
            self.diffusion = np.asarray(self.diffusion, dtype=float)

    @property
    def n(self) -> int:
        return self.A.shape[-1]

    @property
    def p(self) -> int:
        return self.B.shape[-1]


@dataclass
class BoundaryMoments:
    m0: np.ndarray
    mT: np.ndarray
    Sigma0: np.ndarray
    SigmaT: np.ndarray

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)
        self.mT = np.asarray(self.mT, dtype=float)
        self.Sigma0 = _sym(np.asarray(self.Sigma0, dtype=float))
        self.SigmaT = _sym(np.asarray(self.SigmaT, dtype=float))
        for name, S in (("Sigma0", self.Sigma0), ("SigmaT", self.SigmaT)):
            try:
                np.linalg.cholesky(S + 1e-12 * np.eye(S.shape[0]))
            except np.linalg.LinAlgError:
                raise InfeasibleEdgeError(f"boundary covariance {name} is not SPD")


@dataclass
class FeedbackPolicy:
    """u*(t, x) = K(t) x + d(t) at the knots.

    K = -B'Pi and d = v* + B'Pi xbar* hold at every knot by construction;
    ``lam`` is the Pontryagin costate (v* = -B'lam), kept so closed-loop
    propagation can regenerate the continuous-time policy between knots.
    """

    K: np.ndarray          # (N+1, p, n)
    d: np.ndarray          # (N+1, p)
    Pi: np.ndarray         # (N+1, n, n)
    xbar_opt: np.ndarray   # (N+1, n)
    v_opt: np.ndarray      # (N+1, p)
    lam: np.ndarray        # (N+1, n)


# --------------------------------------------------------------------------
# mean two-point boundary value problem
# --------------------------------------------------------------------------

def solve_mean_bvp(terms: LqDrivingTerms, m0, mT, grid):
    """Optimal mean path and feedforward via the Hamiltonian system.

    Returns (xbar (N+1, n), v (N+1, p), lam (N+1, n)).
    """
    m0 = np.asarray(m0, dtype=float)
    mT = np.asarray(mT, dtype=float)
    n = terms.n
    N = grid.steps
    dt = grid.dt

    # augmented generator for z = (x, lam, 1):
    #   xdot = A x + a - BB' lam ; lamdot = -Q x - A' lam - r
    G = np.zeros((N + 1, 2 * n + 1, 2 * n + 1))
    G[:, :n, :n] = terms.A
    G[:, :n, n:2 * n] = -terms.BBT
    G[:, :n, 2 * n] = terms.a
    G[:, n:2 * n, :n] = -terms.Q
    G[:, n:2 * n, n:2 * n] = -np.swapaxes(terms.A, -1, -2)
    G[:, n:2 * n, 2 * n] = -terms.r

    E = _kernels.transition_chain(np.ascontiguousarray(G), dt)

    Phi = E[:, : 2 * n, : 2 * n]
    psi = E[:, : 2 * n, 2 * n]
    Phi11 = Phi[N, :n, :n]
    Phi12 = Phi[N, :n, n:]
    rhs = mT - Phi11 @ m0 - psi[N, :n]
    if np.linalg.cond(Phi12) > 1e12:
        raise InfeasibleEdgeError(
            "reachability block of the transition matrix is singular "
            "(uncontrollable pair over the horizon)")
    lam0 = np.linalg.solve(Phi12, rhs)

    z0 = np.concatenate([m0, lam0])
    z = Phi @ z0 + psi
    xbar = z[:, :n]
    lam = z[:, n:]
    v = -np.einsum("kpn,kn->kp", np.swapaxes(terms.B, -1, -2), lam)

    err = np.linalg.norm(xbar[N] - mT)
    if err > 1e-8 * (1.0 + np.linalg.norm(mT)):
        raise NumericalInstabilityError(
            f"mean boundary value residual {err:.3e} too large; refine the grid")
    return xbar, v, lam


# --------------------------------------------------------------------------
# joint stage-consistent integrator
# --------------------------------------------------------------------------

def _integrate_joint(terms: LqDrivingTerms, Pi0, Sigma0, dt,
                     m0=None, xs0=None, lam0=None, store=False):
    """RK4 of the coupled Riccati / costate / moment system.

    Always integrates Pi and Sigma; when ``m0`` is given, also integrates
    the optimal-mean pair (xbar*, lam) and the closed-loop mean xbar with
    u = -B'Pi (xbar - xbar*) - B'lam. ``Pi0`` may carry a leading batch
    axis (batching is only supported without the mean block).

    Returns (PiT, SigmaT, diverged) or with ``store`` the full knot
    trajectories (Pi, Sigma[, xbar, xs, lam]).
    """
    batched = Pi0.ndim == 3
    with_mean = m0 is not None
    if with_mean and batched:
        raise ValueError("mean block does not support batching")
    n = terms.n
    A = np.ascontiguousarray(terms.A)
    a = np.ascontiguousarray(terms.a)
    Q = np.ascontiguousarray(terms.Q)
    r = np.ascontiguousarray(terms.r)
    BBT = np.ascontiguousarray(terms.BBT)
    D = np.ascontiguousarray(terms.diffusion)
    Sigma0 = np.ascontiguousarray(np.asarray(Sigma0, dtype=float))

    if store:
        if batched:
            raise ValueError("stored trajectories do not support batching")
        zero = np.zeros(n)
        Pi, Sig, xb, xs, lam, ok = _kernels.joint_store(
            A, a, Q, r, BBT, D, np.ascontiguousarray(Pi0), Sigma0,
            np.asarray(m0, dtype=float) if with_mean else zero,
            np.asarray(xs0, dtype=float) if with_mean else zero,
            np.asarray(lam0, dtype=float) if with_mean else zero,
            dt, with_mean)
        if not ok:
            raise NumericalInstabilityError("closed-loop integration diverged")
        out = {"Pi": Pi, "Sigma": Sig}
        if with_mean:
            out["xbar"], out["xs"], out["lam"] = xb, xs, lam
        return out

    Pi0b = np.ascontiguousarray(Pi0 if batched else Pi0[None])
    PiT, SigT, diverged = _kernels.joint_batch(A, Q, BBT, D, Pi0b, Sigma0, dt)
    if batched:
        return PiT, SigT, diverged
    return PiT[0], SigT[0], bool(diverged[0])


# --------------------------------------------------------------------------
# coupled Riccati boundary problem by shooting on Pi(0)
# --------------------------------------------------------------------------

def solve_coupled_riccati(terms: LqDrivingTerms, Sigma0, SigmaT, grid,
                          warm_start=None, max_newton=50, jac_cache=None):
    """Find symmetric Pi(0) whose closed loop steers Sigma0 to SigmaT.

    Shooting: parameterize the upper triangle of Pi(0), integrate the
    Riccati and covariance ODEs forward, Newton (finite-difference Jacobian,
    damped by backtracking) on the terminal covariance mismatch. Mismatch
    tolerance 1e-9 Frobenius (scaled by ||SigmaT||).

    ``jac_cache`` is an optional dict reused across calls: the
    finite-difference Jacobian from a previous, nearby problem seeds a
    chord-Newton iteration and is only recomputed when a step with the
    stale Jacobian fails to reduce the residual.

    Returns the full Pi trajectory, shape (N+1, n, n).
    """
    Sigma0 = _sym(np.asarray(Sigma0, dtype=float))
    SigmaT = _sym(np.asarray(SigmaT, dtype=float))
    n = terms.n
    dt = grid.dt
    idx = np.triu_indices(n)
    s = idx[0].size
    tol = 1e-9 * (1.0 + np.linalg.norm(SigmaT))

    def unvec(theta):
        out = np.zeros(theta.shape[:-1] + (n, n))
        out[..., idx[0], idx[1]] = theta
        out = out + np.swapaxes(out, -1, -2)
        out[..., np.arange(n), np.arange(n)] *= 0.5
        return out

    def residual(theta_batch):
        Pis = unvec(theta_batch)
        _, SigT, div = _integrate_joint(terms, Pis, Sigma0, dt)
        return SigT[..., idx[0], idx[1]] - SigmaT[idx], div

    def initial_point(Pi0):
        theta = Pi0[idx]
        res, div = residual(theta[None])
        res, div = res[0], div[0]
        scale_tries = 0
        while div and scale_tries < 40:
            theta = 0.5 * theta
            res, div = residual(theta[None])
            res, div = res[0], div[0]
            scale_tries += 1
        if div:
            raise InfeasibleEdgeError(
                "Riccati shooting diverges for every initialization scale")
        return theta, res

    def fd_jacobian(theta, res):
        h = 1e-6 * (1.0 + np.abs(theta))
        batch = np.tile(theta, (s, 1))
        batch[np.arange(s), np.arange(s)] += h
        res_b, div_b = residual(batch)
        if div_b.any():
            # shrink the stencil where a perturbed system blows up
            for j in np.nonzero(div_b)[0]:
                hj = h[j]
                ok = False
                for _ in range(8):
                    hj *= 0.1
                    probe = theta.copy()
                    probe[j] += hj
                    rj, dj = residual(probe[None])
                    if not dj[0]:
                        res_b[j], h[j] = rj[0], hj
                        ok = True
                        break
                if not ok:
                    res_b[j], h[j] = res, 1.0  # zero column fallback
        return (res_b - res[None, :]).T / h[None, :]

    def newton(theta, res, J, allow_chord):
        """Damped Newton; returns (theta, res, rnorm, J). ``allow_chord``
        keeps J across iterates while progress is fast; otherwise J is
        recomputed at every new iterate."""
        fresh = False
        rnorm = np.linalg.norm(res)
        for _ in range(max_newton):
            if rnorm <= tol:
                break
            if J is None:
                J = fd_jacobian(theta, res)
                fresh = True
            try:
                step = np.linalg.solve(J, -res)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(J, -res, rcond=None)[0]
            if not np.all(np.isfinite(step)):
                step = np.linalg.lstsq(J, -res, rcond=None)[0]

            t = 1.0
            improved = False
            prev_rnorm = rnorm
            for _ in range(15):
                cand = theta + t * step
                res_c, div_c = residual(cand[None])
                res_c, div_c = res_c[0], div_c[0]
                if not div_c and np.linalg.norm(res_c) < rnorm:
                    theta, res, rnorm = cand, res_c, np.linalg.norm(res_c)
                    improved = True
                    break
                t *= 0.5
            if not improved:
                if fresh:
                    break
                J = None  # stale chord Jacobian failed: recompute and retry
                fresh = False
            else:
                fresh = False  # theta moved; J is now a chord Jacobian
                if not allow_chord or rnorm > 0.5 * prev_rnorm:
                    J = None  # refresh at the new iterate
        return theta, res, rnorm, J

    if warm_start is not None:
        Pi0 = _sym(np.asarray(warm_start, dtype=float))
    else:
        Pi0 = 0.5 * terms.epsilon * np.linalg.inv(Sigma0)
    J0 = None
    if jac_cache is not None:
        cached = jac_cache.get("J")
        if cached is not None and cached.shape == (s, s):
            J0 = cached

    theta, res = initial_point(Pi0)
    theta, res, rnorm, J = newton(theta, res, J0, allow_chord=True)
    if rnorm > tol:
        # fast path stalled; restart cold with a per-iterate Jacobian
        theta, res = initial_point(
            _sym(0.5 * terms.epsilon * np.linalg.inv(Sigma0)))
        theta, res, rnorm, J = newton(theta, res, None, allow_chord=False)
    if rnorm > tol:
        raise InfeasibleEdgeError(
            f"covariance shooting stalled at terminal mismatch {rnorm:.3e}"
            + ("" if terms.epsilon > 0 else " (no diffusion: epsilon = 0)"),
            residual=rnorm)
    if jac_cache is not None and J is not None:
        jac_cache["J"] = J

    out = _integrate_joint(terms, unvec(theta), Sigma0, dt, store=True)
    return _sym(out["Pi"])


# --------------------------------------------------------------------------
# propagation and the assembled policy
# --------------------------------------------------------------------------

def propagate_affine(A, a, diffusion, m0, Sigma0, dt, mean_bound=1e6):
    """RK4 of xdot = A x + a and Sdot = A S + S A' + D with knot-frozen
    coefficients (midpoint averages at half steps)."""
    x, S, ok = _kernels.affine_prop(
        np.ascontiguousarray(np.asarray(A, dtype=float)),
        np.ascontiguousarray(np.asarray(a, dtype=float)),
        np.ascontiguousarray(np.asarray(diffusion, dtype=float)),
        np.asarray(m0, dtype=float),
        np.ascontiguousarray(np.asarray(Sigma0, dtype=float)),
        dt, mean_bound)
    if not ok:
        raise NumericalInstabilityError("mean propagation diverged")
    return x, S


def propagate_closed_loop(terms: LqDrivingTerms, policy: FeedbackPolicy,
                          m0, Sigma0, grid):
    """Moments of the closed loop under the policy, from (m0, Sigma0).

    Pi and the costate are re-integrated from their initial conditions so
    the in-step policy is continuous (the stored knots alone would limit
    accuracy to the knot spacing). Checks SPD at every knot.
    """
    out = _integrate_joint(terms, policy.Pi[0], Sigma0, grid.dt,
                           m0=m0, xs0=policy.xbar_opt[0], lam0=policy.lam[0],
                           store=True)
    x, S = out["xbar"], out["Sigma"]
    w = np.linalg.eigvalsh(S)
    if np.any(w[:, 0] < -1e-10 * np.maximum(1.0, w[:, -1])):
        raise NumericalInstabilityError(
            "covariance lost positive definiteness; refine the grid")
    return x, S


def solve_linear_steering(terms: LqDrivingTerms, boundary: BoundaryMoments,
                          grid, warm_start=None, jac_cache=None) -> FeedbackPolicy:
    """Full solve: mean BVP + covariance shooting, assembled as K, d."""
    xbar, v, lam = solve_mean_bvp(terms, boundary.m0, boundary.mT, grid)
    Pi = solve_coupled_riccati(terms, boundary.Sigma0, boundary.SigmaT, grid,
                               warm_start=warm_start, jac_cache=jac_cache)
    Bt = np.swapaxes(terms.B, -1, -2)
    K = -Bt @ Pi
    d = v + np.einsum("kpn,kn->kp", Bt @ Pi, xbar)
    return FeedbackPolicy(K=K, d=d, Pi=Pi, xbar_opt=xbar, v_opt=v, lam=lam)
