"""Two-player, single-step toy game with a bimodal non-ego cost, and
brute-force oracles for its exact Nash and exact MaxEnt Nash equilibria.

P1 (ego) tracks P2:      J1 = 1/2 u1^2 + 3/2 (x1 - x2)^2
P2 picks one of +-1:     J2 = 1/2 u2^2 + softmin(3/2 (x2 - 1)^2, 3/2 (x2 + 1)^2 + eps)

Both start at the origin and move as single integrators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .game import AgentObjective, DynamicGame, single_integrator
from .inference import ModeBank
from .lq import iterative_lq_solve


def softmin(a, b):
    """``-ln(exp(-a) + exp(-b))``, stable for arbitrarily large arguments."""
    return -np.logaddexp(-np.asarray(a, dtype=float), -np.asarray(b, dtype=float))


@dataclass(frozen=True)
class ToyGame:
    eps: float = 0.1
    beta: float = 0.5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def x0(self) -> np.ndarray:
        return np.zeros(2)

    # P2's terminal cost and its first two derivatives
    def phi2(self, x2):
        x2 = np.asarray(x2, dtype=float)
        return softmin(1.5 * (x2 - 1) ** 2, 1.5 * (x2 + 1) ** 2 + self.eps)

    def phi2_derivatives(self, x2: float):
        a, b = 1.5 * (x2 - 1) ** 2, 1.5 * (x2 + 1) ** 2 + self.eps
        da, db = 3.0 * (x2 - 1), 3.0 * (x2 + 1)
        w_a = float(expit(b - a))  # softmax weight of branch a
        w_b = 1.0 - w_a
        grad = w_a * da + w_b * db
        # second derivative of -ln sum exp(-a_k): E_w[a''] - Var_w[a']
        hess = 3.0 - w_a * w_b * (da - db) ** 2
        return float(softmin(a, b)), grad, hess

    def cost_p1(self, u1, x2_next):
        u1 = np.asarray(u1, dtype=float)
        return 0.5 * u1 ** 2 + 1.5 * (u1 - x2_next) ** 2

    def cost_p2(self, u2):
        u2 = np.asarray(u2, dtype=float)
        return 0.5 * u2 ** 2 + self.phi2(u2)

    def dynamic_game(self) -> DynamicGame:
        return DynamicGame(single_integrator((1, 1)), (_TrackerObjective(), _BimodalObjective(self)), horizon=2)

    def lq_modes(self) -> ModeBank:
        """Both local LQ MaxEnt equilibria, P2 heading right (mode 0) and left
        (mode 1), solved by the iterative LQ game solver."""
        game = self.dynamic_game()
        modes = [iterative_lq_solve(game, self.x0, np.array([[0.0, side]]), self.beta, mode=z)
                 for z, side in enumerate((1.0, -1.0))]
        return ModeBank(tuple(modes), self.x0)


class _TrackerObjective(AgentObjective):
    def running(self, x, u):
        return 0.5 * float(u[0]) ** 2

    def terminal(self, x):
        return 1.5 * float(x[0] - x[1]) ** 2

    def running_derivatives(self, x, u):
        lu = np.array([u[0], 0.0])
        luu = np.diag([1.0, 0.0])
        return self.running(x, u), np.zeros(2), lu, np.zeros((2, 2)), luu, np.zeros((2, 2))

    def terminal_derivatives(self, x):
        d = float(x[0] - x[1])
        g = np.array([3.0 * d, -3.0 * d])
        H = np.array([[3.0, -3.0], [-3.0, 3.0]])
        return self.terminal(x), g, H


class _BimodalObjective(AgentObjective):
    def __init__(self, toy: ToyGame):
        self.toy = toy

    def running(self, x, u):
        return 0.5 * float(u[1]) ** 2

    def terminal(self, x):
        return float(self.toy.phi2(x[1]))

    def running_derivatives(self, x, u):
        lu = np.array([0.0, u[1]])
        luu = np.diag([0.0, 1.0])
        return self.running(x, u), np.zeros(2), lu, np.zeros((2, 2)), luu, np.zeros((2, 2))

    def terminal_derivatives(self, x):
        val, g, h = self.toy.phi2_derivatives(float(x[1]))
        return val, np.array([0.0, g]), np.array([[0.0, 0.0], [0.0, h]])


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def _newton_1d(grad_hess, u, iters=100, tol=1e-14):
    for _ in range(iters):
        g, h = grad_hess(u)
        step = g / h if h > 0 else np.sign(g) * 0.1
        u -= step
        if abs(step) < tol:
            break
    return u


def exact_ne(toy: ToyGame) -> tuple[float, float]:
    """Deterministic Nash equilibrium ``(u1, u2)`` (global minimizer for P2)."""

    def grad_hess(u):
        _, g, h = toy.phi2_derivatives(u)
        return u + g, 1.0 + h

    candidates = [_newton_1d(grad_hess, s) for s in (1.0, -1.0)]
    u2 = min(candidates, key=lambda u: float(toy.cost_p2(u)))
    return 0.75 * u2, u2


@dataclass(frozen=True)
class QuadratureGrid:
    lo: float = -6.0
    hi: float = 6.0
    points: int = 4001
    rtol: float = 1e-8
    max_refinements: int = 8

    def __post_init__(self):
        if self.lo > -6.0 or self.hi < 6.0 or self.points < 4001:
            raise ValueError("quadrature grid must cover [-6, 6] with at least 4001 points")

    def nodes(self, refinement: int = 0) -> np.ndarray:
        return np.linspace(self.lo, self.hi, (self.points - 1) * 2 ** refinement + 1)


class QuadraturePrecisionError(ArithmeticError):
    pass


def _log_normalizer(neg_log_weight, u):
    """``ln trapz(exp(f), u)`` with the maximum factored out."""
    m = np.max(neg_log_weight)
    return m + np.log(np.trapezoid(np.exp(neg_log_weight - m), u))


def _refined(grid: QuadratureGrid, log_weight_fn):
    """Evaluate on successively doubled grids until the log-normalizer settles."""
    prev = None
    for ref in range(grid.max_refinements + 1):
        u = grid.nodes(ref)
        lw = log_weight_fn(u)
        lz = _log_normalizer(lw, u)
        if prev is not None and abs(np.expm1(lz - prev)) < grid.rtol:
            return u, lw, lz
        prev = lz
    raise QuadraturePrecisionError("normalization did not settle under grid refinement")


@dataclass(frozen=True)
class MaxEntDensities:
    u: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray

    def mean(self, density) -> float:
        return float(np.trapezoid(self.u * density, self.u))

    def variance(self, density) -> float:
        m = self.mean(density)
        return float(np.trapezoid((self.u - m) ** 2 * density, self.u))

    @property
    def mean1(self) -> float:
        return self.mean(self.pi1)

    @property
    def mean2(self) -> float:
        return self.mean(self.pi2)


def exact_maxent_ne(toy: ToyGame, grid: QuadratureGrid | None = None) -> MaxEntDensities:
    """Exact MaxEnt Nash equilibrium densities on a quadrature grid.

    P2's cost does not depend on P1, so ``pi2 ~ exp(-beta J2)`` directly; P1
    then best-responds to the expected tracking cost under ``pi2``.
    """
    grid = grid or QuadratureGrid()
    u, lw2, lz2 = _refined(grid, lambda v: -toy.beta * toy.cost_p2(v))
    pi2 = np.exp(lw2 - lz2)
    m1 = np.trapezoid(u * pi2, u)
    m2 = np.trapezoid(u ** 2 * pi2, u)

    def lw1(v):
        # E_{w ~ pi2}[1/2 v^2 + 3/2 (v - w)^2]
        return -toy.beta * (0.5 * v ** 2 + 1.5 * (v ** 2 - 2 * v * m1 + m2))

    lw = lw1(u)
    pi1 = np.exp(lw - _log_normalizer(lw, u))
    return MaxEntDensities(u, pi1, pi2)


def onestep_maxent_value(cost, beta: float, grid: QuadratureGrid | None = None) -> float:
    """Soft value ``-(1/beta) ln integral exp(-beta cost(u)) du`` by quadrature."""
    grid = grid or QuadratureGrid()
    _, _, lz = _refined(grid, lambda v: -beta * np.asarray(cost(v), dtype=float))
    return float(-lz / beta)


def density_maxima(u: np.ndarray, density: np.ndarray) -> np.ndarray:
    """Locations of strict interior local maxima of a sampled density."""
    d = density
    idx = np.flatnonzero((d[1:-1] > d[:-2]) & (d[1:-1] > d[2:])) + 1
    return u[idx]
