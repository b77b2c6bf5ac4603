"""Compiled kernels for kinematic bicycles in a hybrid Cartesian/curvilinear
state, and for the merge stage costs.

Per-agent state  ``[p_x, p_y, v, theta, zeta, s, n, xi]`` (8 entries)
Per-agent control ``[zeta_dot, a]``

    p_x' = v cos(theta)           s'  = v cos(xi) / (1 - n kappa(s))
    p_y' = v sin(theta)           n'  = v sin(xi)
    v'   = a                      xi' = theta' - kappa(s) s'
    theta' = v tan(zeta) / L      zeta' = zeta_dot
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .spline import eval_piecewise

NX_AGENT = 8
NU_AGENT = 2
PX, PY, V, THETA, ZETA, S, N, XI = range(8)
STEER_RATE, ACCEL = range(2)

# cost weight columns
W_CENTER, W_SPEED, W_BOUNDARY, W_HEADING, W_STEER, W_STEER_RATE, W_ACCEL, V_REF, HALF_WIDTH, SHARPNESS = range(10)
N_WEIGHTS = 10


@njit(cache=True)
def agent_derivative(xa, ua, wheelbase, kc, ds, length):
    v = xa[V]
    th = xa[THETA]
    zeta = xa[ZETA]
    n = xa[N]
    xi = xa[XI]
    kap, _ = eval_piecewise(kc, ds, length, xa[S])
    den = 1.0 - n * kap
    f = np.empty(NX_AGENT)
    f[PX] = v * math.cos(th)
    f[PY] = v * math.sin(th)
    f[V] = ua[ACCEL]
    f[THETA] = v * math.tan(zeta) / wheelbase
    f[ZETA] = ua[STEER_RATE]
    f[S] = v * math.cos(xi) / den
    f[N] = v * math.sin(xi)
    f[XI] = f[THETA] - kap * f[S]
    return f


@njit(cache=True)
def agent_derivative_jac(xa, ua, wheelbase, kc, ds, length):
    v = xa[V]
    th = xa[THETA]
    zeta = xa[ZETA]
    n = xa[N]
    xi = xa[XI]
    kap, dkap = eval_piecewise(kc, ds, length, xa[S])
    den = 1.0 - n * kap
    cth, sth = math.cos(th), math.sin(th)
    cxi, sxi = math.cos(xi), math.sin(xi)
    tz = math.tan(zeta)
    cz = math.cos(zeta)

    f = np.empty(NX_AGENT)
    J = np.zeros((NX_AGENT, NX_AGENT))
    G = np.zeros((NX_AGENT, NU_AGENT))
    f[PX] = v * cth
    f[PY] = v * sth
    f[V] = ua[ACCEL]
    f[THETA] = v * tz / wheelbase
    f[ZETA] = ua[STEER_RATE]
    sdot = v * cxi / den
    f[S] = sdot
    f[N] = v * sxi
    f[XI] = f[THETA] - kap * sdot

    J[PX, V] = cth
    J[PX, THETA] = -v * sth
    J[PY, V] = sth
    J[PY, THETA] = v * cth
    J[THETA, V] = tz / wheelbase
    J[THETA, ZETA] = v / (wheelbase * cz * cz)
    J[S, V] = cxi / den
    J[S, XI] = -v * sxi / den
    J[S, N] = sdot * kap / den
    J[S, S] = sdot * n * dkap / den
    J[N, V] = sxi
    J[N, XI] = v * cxi
    for col in range(NX_AGENT):
        J[XI, col] = J[THETA, col] - kap * J[S, col]
    J[XI, S] -= dkap * sdot
    G[V, ACCEL] = 1.0
    G[ZETA, STEER_RATE] = 1.0
    return f, J, G


@njit(cache=True)
def joint_step(x, u, h, wheelbases, kcs, dss, lengths):
    n_agents = wheelbases.shape[0]
    out = np.empty_like(x)
    for i in range(n_agents):
        xa = x[NX_AGENT * i:NX_AGENT * (i + 1)].copy()
        ua = u[NU_AGENT * i:NU_AGENT * (i + 1)].copy()
        L, kc, ds, ln = wheelbases[i], kcs[i], dss[i], lengths[i]
        k1 = agent_derivative(xa, ua, L, kc, ds, ln)
        k2 = agent_derivative(xa + 0.5 * h * k1, ua, L, kc, ds, ln)
        k3 = agent_derivative(xa + 0.5 * h * k2, ua, L, kc, ds, ln)
        k4 = agent_derivative(xa + h * k3, ua, L, kc, ds, ln)
        out[NX_AGENT * i:NX_AGENT * (i + 1)] = xa + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out


@njit(cache=True)
def joint_step_jac(x, u, h, wheelbases, kcs, dss, lengths):
    n_agents = wheelbases.shape[0]
    nx = x.shape[0]
    nu = u.shape[0]
    out = np.empty(nx)
    A = np.zeros((nx, nx))
    B = np.zeros((nx, nu))
    eye = np.eye(NX_AGENT)
    for i in range(n_agents):
        xa = x[NX_AGENT * i:NX_AGENT * (i + 1)].copy()
        ua = u[NU_AGENT * i:NU_AGENT * (i + 1)].copy()
        L, kc, ds, ln = wheelbases[i], kcs[i], dss[i], lengths[i]
        k1, J1, G1 = agent_derivative_jac(xa, ua, L, kc, ds, ln)
        k2, J2, G2 = agent_derivative_jac(xa + 0.5 * h * k1, ua, L, kc, ds, ln)
        k3, J3, G3 = agent_derivative_jac(xa + 0.5 * h * k2, ua, L, kc, ds, ln)
        k4, J4, G4 = agent_derivative_jac(xa + h * k3, ua, L, kc, ds, ln)
        d2x = J2 @ (eye + 0.5 * h * J1)
        d2u = J2 @ (0.5 * h * G1) + G2
        d3x = J3 @ (eye + 0.5 * h * d2x)
        d3u = J3 @ (0.5 * h * d2u) + G3
        d4x = J4 @ (eye + h * d3x)
        d4u = J4 @ (h * d3u) + G4
        a0, a1 = NX_AGENT * i, NX_AGENT * (i + 1)
        b0, b1 = NU_AGENT * i, NU_AGENT * (i + 1)
        out[a0:a1] = xa + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        A[a0:a1, a0:a1] = eye + h / 6.0 * (J1 + 2.0 * d2x + 2.0 * d3x + d4x)
        B[a0:a1, b0:b1] = h / 6.0 * (G1 + 2.0 * d2u + 2.0 * d3u + d4u)
    return out, A, B


@njit(cache=True)
def linearize_batch(X, U, h, wheelbases, kcs, dss, lengths):
    n = U.shape[0]
    nx = X.shape[1]
    nu = U.shape[1]
    A = np.empty((n, nx, nx))
    B = np.empty((n, nx, nu))
    for t in range(n):
        _, A[t], B[t] = joint_step_jac(X[t], U[t], h, wheelbases, kcs, dss, lengths)
    return A, B


@njit(cache=True)
def rollout_feedback(x0, Xbar, Ubar, K, k, alpha, h, wheelbases, kcs, dss, lengths):
    n = Ubar.shape[0]
    X = np.empty((n + 1, x0.shape[0]))
    U = np.empty_like(Ubar)
    X[0] = x0
    for t in range(n):
        U[t] = Ubar[t] - K[t] @ (X[t] - Xbar[t]) - alpha * k[t]
        X[t + 1] = joint_step(X[t], U[t], h, wheelbases, kcs, dss, lengths)
    return X, U


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


@njit(cache=True)
def _softplus(z, k):
    kz = k * z
    if kz > 30.0:
        return z, 1.0, 0.0
    e = math.exp(kz)
    sig = e / (1.0 + e)
    return math.log1p(e) / k, sig, k * sig * (1.0 - sig)


@njit(cache=True)
def stage_cost(x, u, agent, weights, radii, w_collision, terminal_scale, terminal, exact=False):
    """Cost of ``agent`` and its derivatives at a joint ``(x, u)``.

    Returns ``(l, l_x, l_u, l_xx, l_uu, l_ux)``.  With ``terminal`` set the
    control terms are dropped and the state terms scaled by ``terminal_scale``.
    The collision curvature keeps only its Gauss-Newton part unless ``exact``
    is set; the dropped term is concave and destabilizes the coupled solve.
    """
    nx = x.shape[0]
    nu = u.shape[0]
    n_agents = weights.shape[0]
    W = weights[agent]
    lx = np.zeros(nx)
    lu = np.zeros(nu)
    lxx = np.zeros((nx, nx))
    luu = np.zeros((nu, nu))
    lux = np.zeros((nu, nx))
    b = NX_AGENT * agent
    sc = terminal_scale if terminal else 1.0
    val = 0.0

    # centerline, speed, heading error and steering angle: plain quadratics
    for idx, wcol, ref in ((N, W_CENTER, 0.0), (V, W_SPEED, W[V_REF]), (XI, W_HEADING, 0.0),
                           (ZETA, W_STEER, 0.0)):
        w = sc * W[wcol]
        d = x[b + idx] - ref
        val += w * d * d
        lx[b + idx] += 2.0 * w * d
        lxx[b + idx, b + idx] += 2.0 * w

    # road boundary: squared softplus of the violation on either side
    wb = sc * W[W_BOUNDARY]
    hw = W[HALF_WIDTH]
    kk = W[SHARPNESS]
    n = x[b + N]
    for sgn in (1.0, -1.0):
        sp, d1, d2 = _softplus(sgn * n - hw, kk)
        val += wb * sp * sp
        lx[b + N] += wb * 2.0 * sp * d1 * sgn
        lxx[b + N, b + N] += wb * (2.0 * d1 * d1 + 2.0 * sp * d2)

    if not terminal:
        c = NU_AGENT * agent
        for idx, wcol in ((STEER_RATE, W_STEER_RATE), (ACCEL, W_ACCEL)):
            w = W[wcol]
            val += w * u[c + idx] ** 2
            lu[c + idx] += 2.0 * w * u[c + idx]
            luu[c + idx, c + idx] += 2.0 * w

    # pairwise collision: w (R^2 - d^2)_+^2
    wc = sc * w_collision
    for j in range(n_agents):
        if j == agent:
            continue
        o = NX_AGENT * j
        dx = x[b + PX] - x[o + PX]
        dy = x[b + PY] - x[o + PY]
        m = radii[agent, j] ** 2 - dx * dx - dy * dy
        if m <= 0.0:
            continue
        val += wc * m * m
        g = (dx, dy)
        for p in range(2):
            lx[b + p] += -4.0 * wc * m * g[p]
            lx[o + p] += 4.0 * wc * m * g[p]
            for q in range(2):
                hpq = 8.0 * wc * g[p] * g[q]
                if exact and p == q:
                    hpq -= 4.0 * wc * m
                lxx[b + p, b + q] += hpq
                lxx[o + p, o + q] += hpq
                lxx[b + p, o + q] -= hpq
                lxx[o + p, b + q] -= hpq
    return val, lx, lu, lxx, luu, lux


@njit(cache=True)
def quadraticize_batch(X, U, agent, weights, radii, w_collision, terminal_scale):
    n = U.shape[0]
    nx = X.shape[1]
    nu = U.shape[1]
    l = np.empty(n)
    lx = np.empty((n, nx))
    lu = np.empty((n, nu))
    lxx = np.empty((n, nx, nx))
    luu = np.empty((n, nu, nu))
    lux = np.empty((n, nu, nx))
    for t in range(n):
        l[t], lx[t], lu[t], lxx[t], luu[t], lux[t] = stage_cost(
            X[t], U[t], agent, weights, radii, w_collision, terminal_scale, False)
    return l, lx, lu, lxx, luu, lux
