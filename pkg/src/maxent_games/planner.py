"""Ego strategies over a bank of local equilibria: QMDP, maximum likelihood
and fixed-mode (no inference)."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np

from .game import ContractError, DynamicsModel, pd_shift
from .inference import (Belief, ControlEstimate, ModeBank, belief_update, estimate_controls,
                        others)

# regularization added to an indefinite belief-weighted Hessian
QMDP_REG_FLOOR = 1e-6


class Strategy(str, enum.Enum):
    YIELD = "yield"
    NOYIELD = "noyield"
    ML = "ml"
    QMDP = "qmdp"

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ContractError(f"unknown strategy {name!r}") from None

    @property
    def infers(self) -> bool:
        return self in (Strategy.ML, Strategy.QMDP)

    @property
    def label(self) -> str:
        return {"yield": "Yield", "noyield": "NoYield", "ml": "ML", "qmdp": "QMDP"}[self.value]


@dataclass(frozen=True)
class EgoDecision:
    """Ego control at one step together with the affine law
    ``u(x) = control - gain (x - x_ref)`` handed to the tracker."""

    control: np.ndarray
    gain: np.ndarray
    x_ref: np.ndarray
    plan: np.ndarray          # planned ego mean states from this step on
    strategy: Strategy
    belief: Belief
    mode: int | None = None   # mode executed, None for a QMDP blend
    policy_seconds: float = 0.0
    solve_seconds: float = 0.0
    regularized: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.control)):
            raise ContractError("ego control is not finite")
        if self.policy_seconds < 0 or self.solve_seconds < 0:
            raise ContractError("timings must be nonnegative")

    def track(self, x) -> np.ndarray:
        return self.control - self.gain @ (np.asarray(x) - self.x_ref)


def _ego_rows(modes: ModeBank, ego: int) -> np.ndarray:
    return modes.control_slices([ego])


@dataclass(frozen=True)
class _ModeQuadratic:
    """Ego Q-function of one mode at one stage, as a quadratic in the absolute
    ego control with the other agents fixed at their policy means."""

    u_nominal: np.ndarray   # ego nominal control
    grad: np.ndarray        # gradient at u_nominal
    hess: np.ndarray        # own-control Hessian (regularized as in the solver)
    gain: np.ndarray        # d(argmin)/dx for this mode alone
    plan: np.ndarray


def _mode_quadratic(m, k: int, x, ego: int, rows: np.ndarray) -> _ModeQuadratic:
    lq = m.lq
    val = m.values[ego]
    A, B = lq.A[k], lq.B[k]
    P, p = val.P[k + 1], val.p[k + 1]
    PB = P @ B
    Quu = lq.R[ego, k] + B.T @ PB
    Qux = lq.S[ego, k] + PB.T @ A
    Qu = lq.r[ego, k] + B.T @ p
    other = np.setdiff1d(np.arange(B.shape[1]), rows)
    H = 0.5 * (Quu[np.ix_(rows, rows)] + Quu[np.ix_(rows, rows)].T)
    H = H + pd_shift(H) * np.eye(rows.size)
    dx = np.asarray(x) - m.nominal.states[k]
    agents = others(m.num_agents, ego)
    K_o = np.concatenate([m.policies[a].gains[k] for a in agents]) if agents else np.zeros((0, dx.size))
    k_o = np.concatenate([m.policies[a].feedforward[k] for a in agents]) if agents else np.zeros(0)
    du_o = -K_o @ dx - k_o
    g = Qu[rows] + Qux[rows] @ dx + Quu[np.ix_(rows, other)] @ du_o
    # d g / d x with the other agents on their feedback laws
    dg_dx = Qux[rows] - Quu[np.ix_(rows, other)] @ K_o
    gain = np.linalg.solve(H, dg_dx)
    plan = m.nominal.states[k:]
    return _ModeQuadratic(m.nominal.controls[k, rows], g, H, gain, plan)


def _mode_mean(modes: ModeBank, z: int, x, t: int, ego: int):
    m = modes.modes[z]
    k = modes.stage(t)
    pol = m.policies[ego]
    return pol.mean(k, x), pol.gains[k], m.nominal.states[k:]


def qmdp_policy(b: Belief, modes: ModeBank, x_t, t: int | None = None, ego: int = 0) -> EgoDecision:
    """Minimizer of the belief-weighted ego Q-functions of all modes.

    Each mode contributes its own LQ Q-function with the other agents playing
    that mode's policy means, so the objective is quadratic in the ego control
    and the minimizer is closed form.  With a degenerate belief it reduces to
    that mode's ego policy mean.
    """
    start = time.perf_counter()
    if b.num_modes != modes.num_modes:
        raise ContractError("belief and mode bank disagree on the number of modes")
    t = modes.t_solve if t is None else t
    k = modes.stage(t)
    x_t = np.asarray(x_t, dtype=float)
    rows = _ego_rows(modes, ego)
    H = np.zeros((rows.size, rows.size))
    rhs = np.zeros(rows.size)
    G = np.zeros((rows.size, x_t.size))
    plan = None
    for z, m in enumerate(modes.modes):
        w = b.probs[z]
        if w == 0.0:
            continue
        q = _mode_quadratic(m, k, x_t, ego, rows)
        H += w * q.hess
        rhs += w * (q.hess @ q.u_nominal - q.grad)
        G += w * (q.hess @ q.gain)
        plan = w * q.plan if plan is None else plan + w * q.plan
    shift = pd_shift(0.5 * (H + H.T), QMDP_REG_FLOOR)
    if shift > 0:
        H = H + shift * np.eye(rows.size)
    u = np.linalg.solve(H, rhs)
    gain = np.linalg.solve(H, G)
    nx_agent = x_t.size // modes.num_agents
    ego_plan = plan[:, nx_agent * ego:nx_agent * (ego + 1)]
    return EgoDecision(u, gain, x_t, ego_plan, Strategy.QMDP, b, None,
                       time.perf_counter() - start, regularized=shift > 0)


def qmdp_objective(b: Belief, modes: ModeBank, x_t, u_ego, t: int | None = None, ego: int = 0) -> float:
    """Belief-weighted predicted ego cost of ``u_ego`` up to a constant."""
    t = modes.t_solve if t is None else t
    k = modes.stage(t)
    rows = _ego_rows(modes, ego)
    total = 0.0
    for z, m in enumerate(modes.modes):
        q = _mode_quadratic(m, k, x_t, ego, rows)
        d = np.asarray(u_ego) - q.u_nominal
        total += b.probs[z] * float(q.grad @ d + 0.5 * d @ q.hess @ d)
    return total


def _fixed_mode(modes: ModeBank, z: int, x_t, t, ego, strategy, belief) -> EgoDecision:
    start = time.perf_counter()
    t = modes.t_solve if t is None else t
    x_t = np.asarray(x_t, dtype=float)
    u, K, plan = _mode_mean(modes, z, x_t, t, ego)
    nx_agent = x_t.size // modes.num_agents
    return EgoDecision(u, K, x_t, plan[:, nx_agent * ego:nx_agent * (ego + 1)], strategy, belief, z,
                       time.perf_counter() - start)


def ml_policy(b: Belief, modes: ModeBank, x_t, t: int | None = None, ego: int = 0) -> EgoDecision:
    """Ego policy mean of the most likely mode (ties to the lowest index)."""
    if b.num_modes != modes.num_modes:
        raise ContractError("belief and mode bank disagree on the number of modes")
    return _fixed_mode(modes, b.most_likely(), x_t, t, ego, Strategy.ML, b)


def noinf_policy(fixed_mode: int, modes: ModeBank, x_t, t: int | None = None, ego: int = 0,
                 strategy: Strategy = Strategy.NOYIELD) -> EgoDecision:
    """Ego policy mean of a fixed mode; the reported belief is degenerate."""
    if not 0 <= fixed_mode < modes.num_modes:
        raise ContractError(f"mode {fixed_mode} out of range")
    return _fixed_mode(modes, fixed_mode, x_t, t, ego, strategy, Belief.degenerate(modes.num_modes, fixed_mode))


def fixed_mode_for(strategy: Strategy, ego: int, num_agents: int) -> int:
    """Mode played by a non-inferring agent.  Mode ``z`` is the equilibrium in
    which agent ``z`` goes first; ``Yield`` lets the next agent go first."""
    if strategy is Strategy.NOYIELD:
        return ego
    if strategy is Strategy.YIELD:
        return (ego + 1) % num_agents
    raise ContractError(f"{strategy.label} does not play a fixed mode")


def decide(strategy, b: Belief, modes: ModeBank, x_t, t: int | None = None, ego: int = 0) -> EgoDecision:
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.QMDP:
        return qmdp_policy(b, modes, x_t, t, ego)
    if strategy is Strategy.ML:
        return ml_policy(b, modes, x_t, t, ego)
    return noinf_policy(fixed_mode_for(strategy, ego, modes.num_agents), modes, x_t, t, ego, strategy)


@dataclass(frozen=True)
class ObservedStep:
    """Previous state and the step at which it was observed."""

    x_prev: np.ndarray
    t_prev: int
    bank: ModeBank     # bank that was active at ``t_prev``


def plan_step(strategy, x_t, t: int, b: Belief, modes: ModeBank, *, ego: int = 0,
              previous: ObservedStep | None = None, dyn: DynamicsModel | None = None,
              resolve_period: int = 10) -> tuple[EgoDecision, Belief, bool, ControlEstimate | None]:
    """One fast-loop step: recover the other agents' last controls, update the
    belief, and apply the strategy.

    Returns the decision, the updated belief, whether a mode re-solve is due
    (the bank is ``resolve_period`` steps old) and the control estimate.
    """
    strategy = Strategy.parse(strategy)
    est = None
    if strategy.infers and previous is not None and dyn is not None:
        est = estimate_controls(dyn, previous.x_prev, x_t)
        idx = previous.bank.control_slices(others(modes.num_agents, ego))
        b = belief_update(b, previous.bank, previous.x_prev, est.controls[idx], previous.t_prev, ego)
    decision = decide(strategy, b, modes, x_t, t, ego)
    needs_resolve = t - modes.t_solve >= resolve_period
    return decision, b, needs_resolve, est
