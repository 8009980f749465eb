"""Numba kernels for the time-stepping inner loops.

Every kernel advances knot-indexed coefficient arrays with classical RK4,
averaging knot coefficients at half steps. The stage arithmetic for the
(Pi, Sigma) pair is shared between the shooting residual and the
closed-loop propagation so that a converged shooting residual survives
re-propagation bit-for-bit.
"""

import numpy as np
from numba import njit

_BLOWUP = 1.0e9


@njit(cache=True, nogil=True, inline="always")
def _rhs_pi_sigma(P, S, Ai, Qi, Bi, Di):
    At = Ai.T.copy()
    dP = -At @ P - P @ Ai + P @ Bi @ P - Qi
    Acl = Ai - Bi @ P
    dS = Acl @ S + S @ Acl.T.copy() + Di
    return dP, dS


@njit(cache=True, nogil=True)
def joint_batch(A, Q, BBT, D, Pi0, Sigma0, dt):
    """Terminal (Pi, Sigma) for a batch of Pi(0) candidates."""
    Bsz = Pi0.shape[0]
    N = A.shape[0] - 1
    n = A.shape[1]
    PiT = np.empty((Bsz, n, n))
    SigT = np.empty((Bsz, n, n))
    div = np.zeros(Bsz, np.bool_)
    for b in range(Bsz):
        P = 0.5 * (Pi0[b] + Pi0[b].T.copy())
        S = Sigma0.copy()
        bad = False
        for i in range(N):
            A0, A1 = A[i], A[i + 1]
            Am = 0.5 * (A0 + A1)
            Q0, Q1 = Q[i], Q[i + 1]
            Qm = 0.5 * (Q0 + Q1)
            B0, B1 = BBT[i], BBT[i + 1]
            Bm = 0.5 * (B0 + B1)
            D0, D1 = D[i], D[i + 1]
            Dm = 0.5 * (D0 + D1)
            k1P, k1S = _rhs_pi_sigma(P, S, A0, Q0, B0, D0)
            k2P, k2S = _rhs_pi_sigma(P + 0.5 * dt * k1P, S + 0.5 * dt * k1S,
                                     Am, Qm, Bm, Dm)
            k3P, k3S = _rhs_pi_sigma(P + 0.5 * dt * k2P, S + 0.5 * dt * k2S,
                                     Am, Qm, Bm, Dm)
            k4P, k4S = _rhs_pi_sigma(P + dt * k3P, S + dt * k3S,
                                     A1, Q1, B1, D1)
            P = P + (dt / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
            S = S + (dt / 6.0) * (k1S + 2.0 * k2S + 2.0 * k3S + k4S)
            P = 0.5 * (P + P.T.copy())
            S = 0.5 * (S + S.T.copy())
            mx = 0.0
            ok = True
            for u in range(n):
                for v in range(n):
                    pv = abs(P[u, v])
                    sv = abs(S[u, v])
                    if not (pv <= _BLOWUP and sv <= _BLOWUP):
                        ok = False
                    if pv > mx:
                        mx = pv
                    if sv > mx:
                        mx = sv
            if not ok or not np.isfinite(mx):
                bad = True
                break
        div[b] = bad
        PiT[b] = P
        SigT[b] = S
    return PiT, SigT, div


@njit(cache=True, nogil=True)
def joint_store(A, a, Q, r, BBT, D, Pi0, Sigma0, m0, xs0, lam0, dt,
                with_mean):
    """Full knot trajectories of (Pi, Sigma) and, optionally, the
    closed-loop mean triple (xbar, xbar*, lam)."""
    N = A.shape[0] - 1
    n = A.shape[1]
    Pi = np.empty((N + 1, n, n))
    Sig = np.empty((N + 1, n, n))
    xb = np.zeros((N + 1, n))
    xs = np.zeros((N + 1, n))
    lam = np.zeros((N + 1, n))
    Pi[0] = 0.5 * (Pi0 + Pi0.T.copy())
    Sig[0] = 0.5 * (Sigma0 + Sigma0.T.copy())
    if with_mean:
        xb[0], xs[0], lam[0] = m0, xs0, lam0
    ok = True
    for i in range(N):
        A0, A1 = A[i], A[i + 1]
        Am = 0.5 * (A0 + A1)
        Q0, Q1 = Q[i], Q[i + 1]
        Qm = 0.5 * (Q0 + Q1)
        B0, B1 = BBT[i], BBT[i + 1]
        Bm = 0.5 * (B0 + B1)
        D0, D1 = D[i], D[i + 1]
        Dm = 0.5 * (D0 + D1)
        P = Pi[i]
        S = Sig[i]
        k1P, k1S = _rhs_pi_sigma(P, S, A0, Q0, B0, D0)
        k2P, k2S = _rhs_pi_sigma(P + 0.5 * dt * k1P, S + 0.5 * dt * k1S,
                                 Am, Qm, Bm, Dm)
        k3P, k3S = _rhs_pi_sigma(P + 0.5 * dt * k2P, S + 0.5 * dt * k2S,
                                 Am, Qm, Bm, Dm)
        k4P, k4S = _rhs_pi_sigma(P + dt * k3P, S + dt * k3S, A1, Q1, B1, D1)
        Pn = P + (dt / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
        Sn = S + (dt / 6.0) * (k1S + 2.0 * k2S + 2.0 * k3S + k4S)
        Pi[i + 1] = 0.5 * (Pn + Pn.T.copy())
        Sig[i + 1] = 0.5 * (Sn + Sn.T.copy())
        if not np.all(np.isfinite(Pi[i + 1])) or not np.all(np.isfinite(Sig[i + 1])):
            ok = False
            break
        if np.abs(Pi[i + 1]).max() > _BLOWUP or np.abs(Sig[i + 1]).max() > _BLOWUP:
            ok = False
            break
        if with_mean:
            a0, a1 = a[i], a[i + 1]
            am = 0.5 * (a0 + a1)
            r0, r1 = r[i], r[i + 1]
            rm = 0.5 * (r0 + r1)
            x0v, xs0v, l0v = xb[i], xs[i], lam[i]

            # stage 1 at (A0, ...), Pi stage value P
            dxs1 = A0 @ xs0v + a0 - B0 @ l0v
            dl1 = -Q0 @ xs0v - A0.T.copy() @ l0v - r0
            dx1 = A0 @ x0v + a0 - B0 @ (P @ (x0v - xs0v) + l0v)
            # stage 2 at midpoint, Pi stage value P + dt/2 k1P
            P2 = P + 0.5 * dt * k1P
            x2 = x0v + 0.5 * dt * dx1
            xs2 = xs0v + 0.5 * dt * dxs1
            l2 = l0v + 0.5 * dt * dl1
            dxs2 = Am @ xs2 + am - Bm @ l2
            dl2 = -Qm @ xs2 - Am.T.copy() @ l2 - rm
            dx2 = Am @ x2 + am - Bm @ (P2 @ (x2 - xs2) + l2)
            # stage 3 at midpoint, Pi stage value P + dt/2 k2P
            P3 = P + 0.5 * dt * k2P
            x3 = x0v + 0.5 * dt * dx2
            xs3 = xs0v + 0.5 * dt * dxs2
            l3 = l0v + 0.5 * dt * dl2
            dxs3 = Am @ xs3 + am - Bm @ l3
            dl3 = -Qm @ xs3 - Am.T.copy() @ l3 - rm
            dx3 = Am @ x3 + am - Bm @ (P3 @ (x3 - xs3) + l3)
            # stage 4 at t+dt, Pi stage value P + dt k3P
            P4 = P + dt * k3P
            x4 = x0v + dt * dx3
            xs4 = xs0v + dt * dxs3
            l4 = l0v + dt * dl3
            dxs4 = A1 @ xs4 + a1 - B1 @ l4
            dl4 = -Q1 @ xs4 - A1.T.copy() @ l4 - r1
            dx4 = A1 @ x4 + a1 - B1 @ (P4 @ (x4 - xs4) + l4)

            xb[i + 1] = x0v + (dt / 6.0) * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
            xs[i + 1] = xs0v + (dt / 6.0) * (dxs1 + 2 * dxs2 + 2 * dxs3 + dxs4)
            lam[i + 1] = l0v + (dt / 6.0) * (dl1 + 2 * dl2 + 2 * dl3 + dl4)
    return Pi, Sig, xb, xs, lam, ok


@njit(cache=True, nogil=True)
def transition_chain(G, dt):
    """Cumulative RK4 transition matrices E(t_i, 0) for zdot = G(t) z."""
    N = G.shape[0] - 1
    m = G.shape[1]
    E = np.empty((N + 1, m, m))
    E[0] = np.eye(m)
    for i in range(N):
        Gm = 0.5 * (G[i] + G[i + 1])
        Ei = E[i]
        K1 = G[i] @ Ei
        K2 = Gm @ (Ei + 0.5 * dt * K1)
        K3 = Gm @ (Ei + 0.5 * dt * K2)
        K4 = G[i + 1] @ (Ei + dt * K3)
        E[i + 1] = Ei + (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return E


@njit(cache=True, nogil=True)
def affine_prop(A, a, D, x0, S0, dt, mean_bound):
    """RK4 of xdot = A x + a and Sdot = A S + S A' + D."""
    N = A.shape[0] - 1
    n = A.shape[1]
    x = np.empty((N + 1, n))
    S = np.empty((N + 1, n, n))
    x[0] = x0
    S[0] = 0.5 * (S0 + S0.T.copy())
    ok = True
    for i in range(N):
        A0, A1 = A[i], A[i + 1]
        Am = 0.5 * (A0 + A1)
        a0, a1 = a[i], a[i + 1]
        am = 0.5 * (a0 + a1)
        D0, D1 = D[i], D[i + 1]
        Dm = 0.5 * (D0 + D1)
        k1x = A0 @ x[i] + a0
        k1S = A0 @ S[i] + S[i] @ A0.T.copy() + D0
        x2 = x[i] + 0.5 * dt * k1x
        S2 = S[i] + 0.5 * dt * k1S
        k2x = Am @ x2 + am
        k2S = Am @ S2 + S2 @ Am.T.copy() + Dm
        x3 = x[i] + 0.5 * dt * k2x
        S3 = S[i] + 0.5 * dt * k2S
        k3x = Am @ x3 + am
        k3S = Am @ S3 + S3 @ Am.T.copy() + Dm
        x4 = x[i] + dt * k3x
        S4 = S[i] + dt * k3S
        k4x = A1 @ x4 + a1
        k4S = A1 @ S4 + S4 @ A1.T.copy() + D1
        x[i + 1] = x[i] + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        Sn = S[i] + (dt / 6.0) * (k1S + 2 * k2S + 2 * k3S + k4S)
        S[i + 1] = 0.5 * (Sn + Sn.T.copy())
        if not np.all(np.isfinite(x[i + 1])) or np.abs(x[i + 1]).max() > mean_bound:
            ok = False
            break
    return x, S, ok


@njit(cache=True, nogil=True)
def ekf_prop(F, HRH, BQB, P0, dt):
    """RK4 of Pdot = F P + P F' + BQB - P HRH P."""
    N = F.shape[0] - 1
    n = F.shape[1]
    P = np.empty((N + 1, n, n))
    P[0] = 0.5 * (P0 + P0.T.copy())
    ok = True
    for i in range(N):
        F0, F1 = F[i], F[i + 1]
        Fm = 0.5 * (F0 + F1)
        G0, G1 = HRH[i], HRH[i + 1]
        Gm = 0.5 * (G0 + G1)
        Pc = P[i]
        k1 = F0 @ Pc + Pc @ F0.T.copy() + BQB - Pc @ G0 @ Pc
        P2 = Pc + 0.5 * dt * k1
        k2 = Fm @ P2 + P2 @ Fm.T.copy() + BQB - P2 @ Gm @ P2
        P3 = Pc + 0.5 * dt * k2
        k3 = Fm @ P3 + P3 @ Fm.T.copy() + BQB - P3 @ Gm @ P3
        P4 = Pc + dt * k3
        k4 = F1 @ P4 + P4 @ F1.T.copy() + BQB - P4 @ G1 @ P4
        Pn = Pc + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        P[i + 1] = 0.5 * (Pn + Pn.T.copy())
        if not np.all(np.isfinite(P[i + 1])):
            ok = False
            break
    return P, ok
