"""Feedback and maximum-entropy Nash equilibria of LQ games, and the outer
iterative-LQ loop for nonlinear games.

The MaxEnt policy of agent ``i`` at stage ``t`` is Gaussian,

    u^i ~ Normal(ubar^i_t - K^i_t (x - xbar_t) - k^i_t, (beta H^i_t)^-1),

where ``H^i_t`` is the own-control Hessian of the agent's Q-function.  Its mean
is the feedback Nash law, so both solvers share a single backward recursion;
the MaxEnt variant only adds covariances and the log-partition / expectation
terms to the value constants (``V = -(1/beta) ln Z``).
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from numba import njit

from .game import (PD_FLOOR, ContractError, DynamicGame, LqApproximation, NumericalError,
                   Trajectory, lq_approximate)

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


class IllPosedStageError(NumericalError):
    """The stacked stationarity system of a stage is (numerically) singular."""


class ConsistencyError(NumericalError):
    """A value matrix lost symmetry during the backward recursion."""


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeedbackPolicy:
    """Time-varying affine law ``u_t(x) = ubar_t - K_t (x - xbar_t) - k_t`` of one agent."""

    gains: np.ndarray              # (T-1, m, n_x)
    feedforward: np.ndarray        # (T-1, m)
    nominal_states: np.ndarray     # (T, n_x)
    nominal_controls: np.ndarray   # (T-1, m)

    @property
    def num_stages(self) -> int:
        return self.gains.shape[0]

    def mean(self, t: int, x) -> np.ndarray:
        return self.nominal_controls[t] - self.gains[t] @ (np.asarray(x) - self.nominal_states[t]) - self.feedforward[t]


@dataclass(frozen=True)
class AffineGaussianPolicy(FeedbackPolicy):
    covariances: np.ndarray = None  # (T-1, m, m)

    def logpdf(self, t: int, x, u) -> float:
        d = np.asarray(u) - self.mean(t, x)
        cov = self.covariances[t]
        sign, logdet = np.linalg.slogdet(cov)
        return float(-0.5 * (d @ np.linalg.solve(cov, d) + logdet + d.size * _LOG_2PI))


@dataclass(frozen=True)
class QuadraticValue:
    """``V_t(x) = 1/2 dx' P_t dx + p_t' dx + c_t`` with ``dx = x - xbar_t``."""

    P: np.ndarray   # (T, n_x, n_x)
    p: np.ndarray   # (T, n_x)
    c: np.ndarray   # (T,)
    nominal_states: np.ndarray

    def __call__(self, t: int, x) -> float:
        dx = np.asarray(x) - self.nominal_states[t]
        return float(0.5 * dx @ self.P[t] @ dx + self.p[t] @ dx + self.c[t])


@dataclass(frozen=True)
class LocalNashSolution:
    """One local (MaxEnt) Nash equilibrium of the game, i.e. one mode."""

    mode: int
    nominal: Trajectory
    policies: tuple[AffineGaussianPolicy, ...]
    values: tuple[QuadraticValue, ...]
    beta: float
    lq: LqApproximation
    converged: bool = True
    iterations: int = 0
    step_size: float = 1.0
    stationarity: float = 0.0

    @property
    def num_agents(self) -> int:
        return len(self.policies)

    @property
    def horizon(self) -> int:
        return self.nominal.horizon

    def joint_mean(self, t: int, x, agents) -> np.ndarray:
        return np.concatenate([self.policies[a].mean(t, x) for a in agents])

    def joint_covariance(self, t: int, agents) -> np.ndarray:
        blocks = [self.policies[a].covariances[t] for a in agents]
        m = sum(b.shape[0] for b in blocks)
        out = np.zeros((m, m))
        i = 0
        for b in blocks:
            out[i:i + b.shape[0], i:i + b.shape[0]] = b
            i += b.shape[0]
        return out


# ---------------------------------------------------------------------------
# Coupled backward recursion
# ---------------------------------------------------------------------------


@njit(cache=True)
def _coupled_backward(A, B, Q, q, R, r, S, l, QT, qT, lT, offsets, beta, maxent, pd_floor):
    N = Q.shape[0]
    n = A.shape[0]
    nx = A.shape[1]
    nu = B.shape[2]
    P = np.empty((N, n + 1, nx, nx))
    p = np.empty((N, n + 1, nx))
    c = np.empty((N, n + 1))
    K = np.empty((n, nu, nx))
    k = np.empty((n, nu))
    cov = np.zeros((n, nu, nu))
    hess = np.zeros((n, nu, nu))
    own_grad = np.empty((n, nu))
    reg = np.zeros((N, n))
    for i in range(N):
        P[i, n] = 0.5 * (QT[i] + QT[i].T)
        p[i, n] = qT[i]
        c[i, n] = lT[i]

    Quu = np.empty((N, nu, nu))
    Qux = np.empty((N, nu, nx))
    Qxx = np.empty((N, nx, nx))
    Qu = np.empty((N, nu))
    Qx = np.empty((N, nx))
    AB = np.empty((nx, nx + nu))
    M = np.empty((nu, nu))
    YK = np.empty((nu, nx))
    Yk = np.empty(nu)
    for t in range(n - 1, -1, -1):
        At = A[t]
        Bt = B[t]
        AB[:, :nx] = At
        AB[:, nx:] = Bt
        for i in range(N):
            PAB = P[i, t + 1] @ AB
            pi = p[i, t + 1]
            BtP = np.ascontiguousarray(Bt.T) @ PAB
            Quu[i] = R[i, t] + BtP[:, nx:]
            Qux[i] = S[i, t] + BtP[:, :nx]
            Qxx[i] = Q[i, t] + np.ascontiguousarray(At.T) @ np.ascontiguousarray(PAB[:, :nx])
            Qu[i] = r[i, t] + Bt.T @ pi
            Qx[i] = q[i, t] + At.T @ pi
            a = offsets[i]
            b = offsets[i + 1]
            own = 0.5 * (Quu[i, a:b, a:b] + Quu[i, a:b, a:b].T)
            w = np.linalg.eigvalsh(own)
            shift = pd_floor - w[0]
            if shift > 0.0:
                for j in range(b - a):
                    Quu[i, a + j, a + j] += shift
                reg[i, t] = shift
            M[a:b, :] = Quu[i, a:b, :]
            YK[a:b, :] = Qux[i, a:b, :]
            Yk[a:b] = Qu[i, a:b]
            own_grad[t, a:b] = Qu[i, a:b]
            hess[t, a:b, a:b] = 0.5 * (Quu[i, a:b, a:b] + Quu[i, a:b, a:b].T)
        if not np.all(np.isfinite(M)) or np.linalg.slogdet(M)[0] == 0.0:
            return P, p, c, K, k, cov, hess, own_grad, reg, t, 1
        Minv = np.linalg.inv(M)
        # 1-norm condition number
        if np.max(np.sum(np.abs(M), axis=0)) * np.max(np.sum(np.abs(Minv), axis=0)) > 1e13 \
                or not np.all(np.isfinite(Minv)):
            return P, p, c, K, k, cov, hess, own_grad, reg, t, 1
        Kt = Minv @ YK
        kt = Minv @ Yk
        K[t] = Kt
        k[t] = kt
        if maxent:
            for i in range(N):
                a = offsets[i]
                b = offsets[i + 1]
                cov[t, a:b, a:b] = np.linalg.inv(beta * hess[t, a:b, a:b])
                cov[t, a:b, a:b] = 0.5 * (cov[t, a:b, a:b] + cov[t, a:b, a:b].T)
        for i in range(N):
            Qi_uu = Quu[i]
            KtQ = Kt.T @ Qi_uu
            Pn = Qxx[i] + KtQ @ Kt - Kt.T @ Qux[i] - Qux[i].T @ Kt
            scale = max(1.0, np.max(np.abs(Pn)))
            if np.max(np.abs(Pn - Pn.T)) > 1e-8 * scale:
                return P, p, c, K, k, cov, hess, own_grad, reg, t, 2
            P[i, t] = 0.5 * (Pn + Pn.T)
            p[i, t] = Qx[i] + KtQ @ kt - Kt.T @ Qu[i] - Qux[i].T @ kt
            ci = l[i, t] + c[i, t + 1] + 0.5 * kt @ (Qi_uu @ kt) - Qu[i] @ kt
            if maxent:
                a = offsets[i]
                b = offsets[i + 1]
                for j in range(N):
                    if j != i:
                        aj = offsets[j]
                        bj = offsets[j + 1]
                        for r1 in range(aj, bj):
                            for r2 in range(aj, bj):
                                ci += 0.5 * Qi_uu[r1, r2] * cov[t, r2, r1]
                m = b - a
                sign, logdet = np.linalg.slogdet(beta * hess[t, a:b, a:b])
                ci -= (0.5 * m * math.log(2.0 * math.pi) - 0.5 * logdet) / beta
            c[i, t] = ci
    return P, p, c, K, k, cov, hess, own_grad, reg, -1, 0


@dataclass(frozen=True)
class _Backward:
    P: np.ndarray
    p: np.ndarray
    c: np.ndarray
    K: np.ndarray
    k: np.ndarray
    cov: np.ndarray
    hess: np.ndarray
    own_grad: np.ndarray
    reg: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.sum(self.k ** 2))


def _backward(lq: LqApproximation, beta: float, maxent: bool) -> _Backward:
    try:
        out = _coupled_backward(lq.A, lq.B, lq.Q, lq.q, lq.R, lq.r, lq.S, lq.l, lq.QT, lq.qT, lq.lT,
                                np.asarray(lq.control_offsets, dtype=np.int64), float(beta), maxent, PD_FLOOR)
    except np.linalg.LinAlgError as exc:
        raise IllPosedStageError(f"stacked stationarity system is singular ({exc})") from None
    *arrays, stage, status = out
    if status == 1:
        raise IllPosedStageError("stacked stationarity system is singular", int(stage))
    if status == 2:
        raise ConsistencyError("value matrix lost symmetry", int(stage))
    return _Backward(*arrays)


def _package(lq: LqApproximation, bw: _Backward, maxent: bool):
    X, U = lq.nominal.states, lq.nominal.controls
    policies, values = [], []
    for i in range(lq.num_agents):
        sl = lq.agent_slice(i)
        kwargs = dict(gains=bw.K[:, sl, :], feedforward=bw.k[:, sl], nominal_states=X,
                      nominal_controls=U[:, sl])
        if maxent:
            policies.append(AffineGaussianPolicy(covariances=bw.cov[:, sl, sl], **kwargs))
        else:
            policies.append(FeedbackPolicy(**kwargs))
        values.append(QuadraticValue(bw.P[i], bw.p[i], bw.c[i], X))
    return tuple(policies), tuple(values)


def solve_feedback_ne_lq(lq: LqApproximation):
    """Deterministic feedback Nash equilibrium of the LQ game ``lq``.

    Returns per-agent :class:`FeedbackPolicy` laws and :class:`QuadraticValue`
    cost-to-go approximations.
    """
    return _package(lq, _backward(lq, 1.0, False), False)


def solve_maxent_ne_lq(lq: LqApproximation, beta: float):
    """MaxEnt Nash equilibrium of the LQ game ``lq`` at rationality ``beta``.

    Policy means coincide with :func:`solve_feedback_ne_lq`; the covariance of
    agent ``i`` is ``(beta H^i_t)^-1`` and value constants include the
    expectation over the other agents' noise and the log-partition term.
    """
    if not beta > 0:
        raise ContractError(f"beta must be positive, got {beta}")
    return _package(lq, _backward(lq, beta, True), True)


# ---------------------------------------------------------------------------
# Iterative LQ game solver
# ---------------------------------------------------------------------------


def iterative_lq_solve(game: DynamicGame, x0, seed: Trajectory | np.ndarray, beta: float, *,
                       mode: int = 0, max_iterations: int = 100, tol: float = 1e-5,
                       max_halvings: int = 20, memory: int = 5) -> LocalNashSolution:
    """Converge to the local MaxEnt Nash equilibrium nearest to ``seed``.

    ``seed`` is either a trajectory or a control sequence; it is re-rolled from
    ``x0``.  Each iteration linearizes about the current nominal, solves the LQ
    game and rolls the policy means forward with a backtracking line search on
    the summed squared feedforward terms (the stationarity residual).  A step
    is accepted when its residual is below the largest of the last ``memory``
    residuals, so the search tolerates the occasional uphill step that the
    coupled Newton-like iteration takes on its way to a fixed point.
    """
    if not beta > 0:
        raise ContractError(f"beta must be positive, got {beta}")
    x0 = np.asarray(x0, dtype=float)
    U0 = seed.controls if isinstance(seed, Trajectory) else np.asarray(seed, dtype=float)
    if U0.shape != (game.horizon - 1, game.control_dim):
        raise ContractError(f"seed controls have shape {U0.shape}")
    dyn = game.dynamics
    zeros_K = np.zeros((game.horizon - 1, game.control_dim, game.state_dim))
    X, U = dyn.rollout_feedback(x0, np.zeros((game.horizon, game.state_dim)), U0, zeros_K,
                                np.zeros_like(U0), 0.0)
    if not np.all(np.isfinite(X)):
        raise NumericalError("seed rollout diverged")
    lq = lq_approximate(game, Trajectory(X, U))
    bw = _backward(lq, beta, True)

    converged = False
    alpha = 1.0
    it = 0
    history = deque(maxlen=memory)
    for it in range(1, max_iterations + 1):
        history.append(bw.residual)
        # non-monotone acceptance: beat the worst of the recent residuals
        merit = max(history)
        alpha = 1.0
        accepted = None
        for _ in range(max_halvings + 1):
            Xn, Un = dyn.rollout_feedback(x0, X, U, bw.K, bw.k, alpha)
            if np.all(np.isfinite(Xn)) and np.all(np.isfinite(Un)):
                if np.max(np.abs(Un - U)) < tol:
                    # a full step this small is convergence; a shrunken one is a stall
                    if alpha == 1.0:
                        accepted = (Xn, Un, None)
                    break
                try:
                    lq_n = lq_approximate(game, Trajectory(Xn, Un))
                    bw_n = _backward(lq_n, beta, True)
                except NumericalError:
                    bw_n = None
                if bw_n is not None and bw_n.residual < merit:
                    accepted = (Xn, Un, (lq_n, bw_n))
                    break
            alpha *= 0.5
        if accepted is None:
            log.debug("line search failed at iteration %d (residual %.3e)", it, merit)
            break
        Xn, Un, lin = accepted
        change = np.max(np.abs(Un - U))
        X, U = Xn, Un
        if lin is None:
            lq = lq_approximate(game, Trajectory(X, U))
            bw = _backward(lq, beta, True)
        else:
            lq, bw = lin
        if change < tol:
            converged = True
            break

    costs = lq.lT + lq.l.sum(axis=1)
    if not np.all(np.isfinite(costs)):
        raise NumericalError("iterative LQ solve diverged")
    if not converged:
        log.info("iterative LQ solve for mode %d stopped after %d iterations without converging", mode, it)
    policies, values = _package(lq, bw, True)
    return LocalNashSolution(mode=mode, nominal=lq.nominal, policies=policies, values=values,
                             beta=float(beta), lq=lq, converged=converged, iterations=it,
                             step_size=alpha, stationarity=float(np.max(np.abs(bw.own_grad))))
