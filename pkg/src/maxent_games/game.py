"""Dynamic games: dynamics, per-agent objectives, trajectories and their local
linear-quadratic approximations.

Conventions
-----------
A game with horizon ``T`` has states ``x_1 .. x_T`` (stored as an array of
shape ``(T, n_x)``) and joint controls ``u_1 .. u_{T-1}`` (shape
``(T - 1, n_u)``).  The joint control vector is the concatenation of the
per-agent control vectors in agent order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: own-control Hessian blocks are shifted so that their smallest eigenvalue is
#: at least this value
PD_FLOOR = 1e-6


class ContractError(ValueError):
    """Raised when an input violates a documented shape or domain contract."""


class NumericalError(ArithmeticError):
    """Raised when a derivative or value becomes non-finite."""

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message if stage is None else f"{message} (stage {stage})")
        self.stage = stage


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


class DynamicsModel:
    """Discrete-time joint dynamics ``x_{t+1} = f(x_t, u_t)``.

    Subclasses implement :meth:`step` and :meth:`jacobians`; the batched and
    rollout helpers have generic loop implementations that fast models may
    override.
    """

    state_dim: int
    control_dims: tuple[int, ...]

    @property
    def control_dim(self) -> int:
        return int(sum(self.control_dims))

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(df/dx, df/du)`` at ``(x, u)``."""
        raise NotImplementedError

    def linearize(self, states: np.ndarray, controls: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = controls.shape[0]
        A = np.empty((n, self.state_dim, self.state_dim))
        B = np.empty((n, self.state_dim, self.control_dim))
        for t in range(n):
            A[t], B[t] = self.jacobians(states[t], controls[t])
        return A, B

    def rollout_feedback(self, x0, nominal_states, nominal_controls, gains, feedforward, step_size):
        """Roll out ``u_t = ubar_t - K_t (x_t - xbar_t) - step_size * k_t``."""
        n = nominal_controls.shape[0]
        X = np.empty((n + 1, self.state_dim))
        U = np.empty_like(nominal_controls)
        X[0] = x0
        for t in range(n):
            U[t] = nominal_controls[t] - gains[t] @ (X[t] - nominal_states[t]) - step_size * feedforward[t]
            X[t + 1] = self.step(X[t], U[t])
        return X, U


class LinearDynamics(DynamicsModel):
    """Time-invariant ``x' = A x + B u``."""

    def __init__(self, A, B, control_dims: Sequence[int]):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.state_dim = self.A.shape[0]
        self.control_dims = tuple(int(m) for m in control_dims)
        if self.B.shape != (self.state_dim, self.control_dim):
            raise ContractError(f"B has shape {self.B.shape}, expected {(self.state_dim, self.control_dim)}")

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def jacobians(self, x, u):
        return self.A, self.B

    def linearize(self, states, controls):
        n = controls.shape[0]
        return np.broadcast_to(self.A, (n,) + self.A.shape).copy(), np.broadcast_to(self.B, (n,) + self.B.shape).copy()


def single_integrator(control_dims: Sequence[int]) -> LinearDynamics:
    """``x_{t+1} = x_t + u_t`` with one state per control channel."""
    n = int(sum(control_dims))
    return LinearDynamics(np.eye(n), np.eye(n), control_dims)


class RK4Dynamics(DynamicsModel):
    """Discretizes a continuous model ``xdot = F(x, u)`` with one classical
    Runge-Kutta step of length ``dt``.

    Subclasses provide :meth:`derivative` and :meth:`derivative_jacobians`.  The
    discrete Jacobians are the exact derivatives of the RK4 map (chain rule
    through the four stages), not a re-linearization of ``F``.
    """

    dt: float

    def derivative(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def derivative_jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def step(self, x, u):
        h = self.dt
        k1 = self.derivative(x, u)
        k2 = self.derivative(x + 0.5 * h * k1, u)
        k3 = self.derivative(x + 0.5 * h * k2, u)
        k4 = self.derivative(x + h * k3, u)
        return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def jacobians(self, x, u):
        h = self.dt
        eye = np.eye(self.state_dim)
        k1 = self.derivative(x, u)
        J1, G1 = self.derivative_jacobians(x, u)
        x2 = x + 0.5 * h * k1
        k2 = self.derivative(x2, u)
        J2, G2 = self.derivative_jacobians(x2, u)
        x3 = x + 0.5 * h * k2
        k3 = self.derivative(x3, u)
        J3, G3 = self.derivative_jacobians(x3, u)
        x4 = x + h * k3
        J4, G4 = self.derivative_jacobians(x4, u)

        dk1x, dk1u = J1, G1
        dk2x = J2 @ (eye + 0.5 * h * dk1x)
        dk2u = J2 @ (0.5 * h * dk1u) + G2
        dk3x = J3 @ (eye + 0.5 * h * dk2x)
        dk3u = J3 @ (0.5 * h * dk2u) + G3
        dk4x = J4 @ (eye + h * dk3x)
        dk4u = J4 @ (h * dk3u) + G4
        A = eye + h / 6.0 * (dk1x + 2 * dk2x + 2 * dk3x + dk4x)
        B = h / 6.0 * (dk1u + 2 * dk2u + 2 * dk3u + dk4u)
        return A, B


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


class AgentObjective:
    """Running cost ``l(x, u)`` and terminal cost ``phi(x)`` of one agent.

    ``u`` is always the *joint* control.  Derivative methods return
    ``(value, l_x, l_u, l_xx, l_uu, l_ux)`` for the running cost and
    ``(value, phi_x, phi_xx)`` for the terminal cost.
    """

    def running(self, x, u) -> float:
        raise NotImplementedError

    def terminal(self, x) -> float:
        raise NotImplementedError

    def running_derivatives(self, x, u):
        raise NotImplementedError

    def terminal_derivatives(self, x):
        raise NotImplementedError

    def quadraticize(self, states, controls):
        """Batched running-cost derivatives along a trajectory.

        Returns arrays ``l (T-1,)``, ``l_x (T-1, n_x)``, ``l_u (T-1, n_u)``,
        ``l_xx``, ``l_uu``, ``l_ux`` stacked over time.
        """
        n = controls.shape[0]
        nx, nu = states.shape[1], controls.shape[1]
        l = np.empty(n)
        lx = np.empty((n, nx))
        lu = np.empty((n, nu))
        lxx = np.empty((n, nx, nx))
        luu = np.empty((n, nu, nu))
        lux = np.empty((n, nu, nx))
        for t in range(n):
            l[t], lx[t], lu[t], lxx[t], luu[t], lux[t] = self.running_derivatives(states[t], controls[t])
        return l, lx, lu, lxx, luu, lux


class QuadraticObjective(AgentObjective):
    """``l = 1/2 dx' Q dx + 1/2 du' R du + du' S dx`` with ``dx = x - x_ref``,
    ``du = u - u_ref``; ``phi = 1/2 dx' Qf dx``."""

    def __init__(self, Q, R, Qf, S=None, x_ref=None, u_ref=None):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.Qf = np.atleast_2d(np.asarray(Qf, dtype=float))
        nx, nu = self.Q.shape[0], self.R.shape[0]
        self.S = np.zeros((nu, nx)) if S is None else np.asarray(S, dtype=float)
        self.x_ref = np.zeros(nx) if x_ref is None else np.asarray(x_ref, dtype=float)
        self.u_ref = np.zeros(nu) if u_ref is None else np.asarray(u_ref, dtype=float)

    def running(self, x, u):
        dx, du = x - self.x_ref, u - self.u_ref
        return float(0.5 * dx @ self.Q @ dx + 0.5 * du @ self.R @ du + du @ self.S @ dx)

    def terminal(self, x):
        dx = x - self.x_ref
        return float(0.5 * dx @ self.Qf @ dx)

    def running_derivatives(self, x, u):
        dx, du = x - self.x_ref, u - self.u_ref
        lx = self.Q @ dx + self.S.T @ du
        lu = self.R @ du + self.S @ dx
        return self.running(x, u), lx, lu, self.Q, self.R, self.S

    def terminal_derivatives(self, x):
        dx = x - self.x_ref
        return self.terminal(x), self.Qf @ dx, self.Qf


# ---------------------------------------------------------------------------
# Game container and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DynamicGame:
    dynamics: DynamicsModel
    objectives: tuple[AgentObjective, ...]
    horizon: int
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        if self.num_agents < 1:
            raise ContractError("a game needs at least one agent")
        if len(self.dynamics.control_dims) != self.num_agents:
            raise ContractError(
                f"{len(self.dynamics.control_dims)} control blocks for {self.num_agents} agents")
        if self.horizon < 2:
            raise ContractError(f"horizon must be >= 2, got {self.horizon}")
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")

    @property
    def num_agents(self) -> int:
        return len(self.objectives)

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dims(self) -> tuple[int, ...]:
        return self.dynamics.control_dims

    @property
    def control_dim(self) -> int:
        return self.dynamics.control_dim

    @property
    def control_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.control_dims)]).astype(np.int64)

    def control_slice(self, agent: int) -> slice:
        off = self.control_offsets
        return slice(int(off[agent]), int(off[agent + 1]))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.states, dtype=float)
        U = np.asarray(self.controls, dtype=float)
        if X.ndim != 2 or U.ndim != 2 or X.shape[0] != U.shape[0] + 1:
            raise ContractError(f"inconsistent trajectory shapes {X.shape} / {U.shape}")
        X.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "controls", U)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def rollout(game: DynamicGame, x0, controls) -> Trajectory:
    """Integrate the game dynamics from ``x0`` under an open-loop control sequence."""
    U = np.atleast_2d(np.asarray(controls, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    if U.shape != (game.horizon - 1, game.control_dim):
        raise ContractError(f"controls have shape {U.shape}, expected {(game.horizon - 1, game.control_dim)}")
    if x0.shape != (game.state_dim,):
        raise ContractError(f"x0 has shape {x0.shape}, expected {(game.state_dim,)}")
    X = np.empty((game.horizon, game.state_dim))
    X[0] = x0
    for t in range(game.horizon - 1):
        X[t + 1] = game.dynamics.step(X[t], U[t])
    return Trajectory(X, U)


def evaluate_cost(game: DynamicGame, traj: Trajectory, agent: int) -> float:
    """Total cost ``phi(x_T) + sum_t l(x_t, u_t)`` of one agent along ``traj``."""
    if traj.horizon != game.horizon or traj.controls.shape[1] != game.control_dim:
        raise ContractError("trajectory does not match the game dimensions")
    obj = game.objectives[agent]
    total = obj.terminal(traj.states[-1])
    for t in range(game.horizon - 1):
        total += obj.running(traj.states[t], traj.controls[t])
    return float(total)


# ---------------------------------------------------------------------------
# LQ approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqApproximation:
    """Linearized dynamics and quadraticized costs about ``nominal``.

    Per-agent arrays carry a leading agent axis: ``Q (N, T-1, n_x, n_x)``,
    ``R (N, T-1, n_u, n_u)``, ``S (N, T-1, n_u, n_x)``, gradients ``q``/``r``,
    stage cost values ``l (N, T-1)`` and terminal terms ``QT``, ``qT``, ``lT``.
    All quantities are in the deviation variables ``dx = x - xbar_t``,
    ``du = u - ubar_t``.
    """

    nominal: Trajectory
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    S: np.ndarray
    l: np.ndarray
    QT: np.ndarray
    qT: np.ndarray
    lT: np.ndarray
    control_offsets: np.ndarray
    regularization: np.ndarray = field(default=None)

    @property
    def num_agents(self) -> int:
        return self.Q.shape[0]

    @property
    def horizon(self) -> int:
        return self.A.shape[0] + 1

    def agent_slice(self, agent: int) -> slice:
        return slice(int(self.control_offsets[agent]), int(self.control_offsets[agent + 1]))


def pd_shift(block: np.ndarray, floor: float = PD_FLOOR) -> float:
    """Smallest ``lam >= 0`` such that ``block + lam I`` has min eigenvalue >= floor."""
    w = np.linalg.eigvalsh(0.5 * (block + block.T))
    return max(0.0, floor - float(w[0]))


def lq_approximate(game: DynamicGame, nominal: Trajectory) -> LqApproximation:
    """Linearize dynamics and quadraticize every agent's cost about ``nominal``.

    Own-control Hessian blocks of the running costs are shifted to be positive
    definite; the applied shifts are recorded in ``regularization`` with shape
    ``(N, T-1)``.
    """
    X, U = nominal.states, nominal.controls
    if X.shape[0] != game.horizon:
        raise ContractError(f"nominal has {X.shape[0]} states, game horizon is {game.horizon}")
    N = game.num_agents
    n = game.horizon - 1
    nx, nu = game.state_dim, game.control_dim
    A, B = game.dynamics.linearize(X, U)
    Q = np.empty((N, n, nx, nx))
    q = np.empty((N, n, nx))
    R = np.empty((N, n, nu, nu))
    r = np.empty((N, n, nu))
    S = np.empty((N, n, nu, nx))
    l = np.empty((N, n))
    QT = np.empty((N, nx, nx))
    qT = np.empty((N, nx))
    lT = np.empty(N)
    reg = np.zeros((N, n))
    for i, obj in enumerate(game.objectives):
        l[i], q[i], r[i], Q[i], R[i], S[i] = obj.quadraticize(X, U)
        lT[i], qT[i], QT[i] = obj.terminal_derivatives(X[-1])
        sl = game.control_slice(i)
        own = R[i][:, sl, sl]
        w_min = np.linalg.eigvalsh(0.5 * (own + np.swapaxes(own, 1, 2)))[:, 0]
        shift = np.maximum(0.0, PD_FLOOR - w_min)
        if np.any(shift > 0):
            m = sl.stop - sl.start
            R[i][:, sl, sl] += shift[:, None, None] * np.eye(m)
        reg[i] = shift

    for name, arr in (("A", A), ("B", B), ("Q", Q), ("q", q), ("R", R), ("r", r), ("S", S), ("l", l)):
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1) if name in ("A", "B") else
                           np.moveaxis(arr, 1, 0).reshape(n, -1))
        if bad.any():
            raise NumericalError(f"non-finite {name} in LQ approximation", int(np.argwhere(bad.any(axis=1))[0, 0]))
    if not (np.all(np.isfinite(QT)) and np.all(np.isfinite(qT)) and np.all(np.isfinite(lT))):
        raise NumericalError("non-finite terminal cost derivatives", n)
    return LqApproximation(nominal, A, B, Q, q, R, r, S, l, QT, qT, lT, game.control_offsets, reg)
