"""Belief over which local Nash equilibrium (mode) the other agents are playing.

Mode priors come from the per-mode soft values, posteriors from the MaxEnt
policies of the other agents evaluated at the observed state.  A naive
position-likelihood filter is kept as a baseline.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .game import ContractError, DynamicsModel
from .lq import LocalNashSolution

log = logging.getLogger(__name__)

# per-mode log-likelihood floor relative to the best mode
LOG_LIKELIHOOD_FLOOR = -50.0
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Belief:
    """Probabilities over ``Z`` modes.  ``informative`` is False when the
    update that produced it carried no usable evidence."""

    probs: np.ndarray
    informative: bool = True

    def __post_init__(self):
        b = np.array(self.probs, dtype=float).ravel()
        if b.size < 1:
            raise ContractError("belief needs at least one mode")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ContractError(f"belief entries must be finite and nonnegative: {b}")
        if abs(b.sum() - 1.0) > 1e-9:
            raise ContractError(f"belief must sum to one, sums to {b.sum()}")
        b = b / b.sum()
        b.setflags(write=False)
        object.__setattr__(self, "probs", b)

    @classmethod
    def uniform(cls, num_modes: int) -> "Belief":
        return cls(np.full(num_modes, 1.0 / num_modes))

    @classmethod
    def degenerate(cls, num_modes: int, mode: int) -> "Belief":
        b = np.zeros(num_modes)
        b[mode] = 1.0
        return cls(b)

    @classmethod
    def from_log(cls, log_weights, informative: bool = True) -> "Belief":
        lw = np.asarray(log_weights, dtype=float)
        return cls(np.exp(lw - logsumexp(lw)), informative)

    @property
    def num_modes(self) -> int:
        return self.probs.size

    def most_likely(self) -> int:
        """Index of the largest entry; ties go to the lowest index."""
        return int(np.argmax(self.probs))

    def __getitem__(self, z):
        return self.probs[z]

    def __len__(self):
        return self.num_modes


@dataclass(frozen=True)
class ModeBank:
    """Local equilibria solved from a common state ``x_solve`` at control step
    ``t_solve``.  Stage ``k`` of every mode corresponds to step ``t_solve + k``."""

    modes: tuple[LocalNashSolution, ...]
    x_solve: np.ndarray
    t_solve: int = 0
    solve_seconds: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.modes) < 1:
            raise ContractError("mode bank is empty")
        m0 = self.modes[0]
        for m in self.modes[1:]:
            if m.horizon != m0.horizon or m.beta != m0.beta:
                raise ContractError("modes must share horizon and beta")
            if [p.gains.shape[1] for p in m.policies] != [p.gains.shape[1] for p in m0.policies]:
                raise ContractError("modes must share agent structure")
        x = np.array(self.x_solve, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x_solve", x)
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def num_modes(self) -> int:
        return len(self.modes)

    @property
    def beta(self) -> float:
        return self.modes[0].beta

    @property
    def horizon(self) -> int:
        return self.modes[0].horizon

    @property
    def num_agents(self) -> int:
        return self.modes[0].num_agents

    def stage(self, t: int) -> int:
        """Policy stage used at control step ``t``, held at the last stage once
        the bank is older than its horizon."""
        return int(np.clip(t - self.t_solve, 0, self.horizon - 2))

    def control_slices(self, agents) -> np.ndarray:
        """Joint-control indices of ``agents``."""
        dims = [p.gains.shape[1] for p in self.modes[0].policies]
        off = np.concatenate([[0], np.cumsum(dims)])
        return np.concatenate([np.arange(off[a], off[a + 1]) for a in agents])


def others(num_agents: int, ego: int) -> list[int]:
    return [a for a in range(num_agents) if a != ego]


def prior_belief(modes: ModeBank, x0, beta: float | None = None, t: int | None = None) -> Belief:
    """Boltzmann prior ``b0(z) ~ exp(-beta sum_i V^{i,z}(x0))``."""
    beta = modes.beta if beta is None else float(beta)
    if not beta >= 0:
        raise ContractError(f"beta must be nonnegative, got {beta}")
    k = modes.stage(modes.t_solve if t is None else t)
    x0 = np.asarray(x0, dtype=float)
    total = np.array([sum(v(k, x0) for v in m.values) for m in modes.modes])
    lw = -beta * total
    if not np.all(np.isfinite(lw)) or np.all(lw == -np.inf):
        warnings.warn("mode prior weights are not finite; using a uniform prior", RuntimeWarning, stacklevel=2)
        return Belief(Belief.uniform(modes.num_modes).probs, informative=False)
    return Belief.from_log(lw)


def _posterior(b: Belief, loglik: np.ndarray) -> Belief:
    finite = np.isfinite(loglik)
    if not np.any(finite):
        return Belief(b.probs, informative=False)
    ll = np.where(finite, loglik, -np.inf)
    ll = np.maximum(ll - ll.max(), LOG_LIKELIHOOD_FLOOR)
    with np.errstate(divide="ignore"):
        lb = np.log(b.probs)
    return Belief.from_log(lb + ll)


def gaussian_logpdf(d: np.ndarray, cov: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return -np.inf
    z = np.linalg.solve(L, d)
    return float(-0.5 * (z @ z) - np.sum(np.log(np.diag(L))) - 0.5 * d.size * _LOG_2PI)


def mode_loglikelihoods(modes: ModeBank, x, u_others, t: int, ego: int = 0) -> np.ndarray:
    """Joint Gaussian log-density of the other agents' controls under each mode,
    with the feedback policy evaluated at the observed state ``x``."""
    k = modes.stage(t)
    x = np.asarray(x, dtype=float)
    u_others = np.asarray(u_others, dtype=float)
    ll = np.empty(modes.num_modes)
    for z, m in enumerate(modes.modes):
        agents = others(m.num_agents, ego)
        mu = m.joint_mean(k, x, agents)
        if mu.shape != u_others.shape:
            raise ContractError(f"observed controls have shape {u_others.shape}, expected {mu.shape}")
        ll[z] = gaussian_logpdf(u_others - mu, m.joint_covariance(k, agents))
    return ll


def belief_update(b: Belief, modes: ModeBank, x_t, u_others, t: int | None = None, ego: int = 0) -> Belief:
    """Bayes update from the other agents' controls ``u_others`` applied at
    state ``x_t`` (control step ``t``, default the bank's solve step)."""
    if b.num_modes != modes.num_modes:
        raise ContractError("belief and mode bank disagree on the number of modes")
    t = modes.t_solve if t is None else t
    return _posterior(b, mode_loglikelihoods(modes, x_t, u_others, t, ego))


def naive_belief_update(b: Belief, modes: ModeBank, x_obs, sigma: float = 0.1, t: int | None = None,
                        ego: int = 0) -> Belief:
    """Bayes update from observed positions of the other agents, isotropic
    Gaussian about each mode's nominal prediction at step ``t``.

    ``x_obs`` is either the flat vector of the other agents' positions or a
    full joint state, from which the positions are taken.
    """
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    t = modes.t_solve if t is None else t
    k = int(np.clip(t - modes.t_solve, 0, modes.horizon - 1))
    pos_idx = modes.meta.get("position_index")
    if pos_idx is None:
        raise ContractError("mode bank does not declare position indices for the naive filter")
    agents = others(modes.num_agents, ego)
    idx = np.concatenate([pos_idx[a] for a in agents])
    x_obs = np.asarray(x_obs, dtype=float)
    obs = x_obs[idx] if x_obs.size == modes.x_solve.size else x_obs
    ll = np.array([-0.5 * np.sum((obs - m.nominal.states[k, idx]) ** 2) / sigma ** 2 for m in modes.modes])
    return _posterior(b, ll)


@dataclass(frozen=True)
class ControlEstimate:
    controls: np.ndarray
    residual: float
    confident: bool
    iterations: int


def estimate_controls(dyn: DynamicsModel, x_t, x_next, *, max_iterations: int = 20,
                      rel_threshold: float = 1e-2, tol: float = 1e-12) -> ControlEstimate:
    """Least-squares joint control ``argmin_u |x_next - f(x_t, u)|^2`` by
    Gauss-Newton from ``u = 0``."""
    x_t = np.asarray(x_t, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    u = np.zeros(dyn.control_dim)
    it = 0
    for it in range(1, max_iterations + 1):
        r = dyn.step(x_t, u) - x_next
        _, B = dyn.jacobians(x_t, u)
        du, *_ = np.linalg.lstsq(B, -r, rcond=None)
        u = u + du
        if np.max(np.abs(du)) < tol:
            break
    residual = float(np.linalg.norm(dyn.step(x_t, u) - x_next))
    confident = residual <= rel_threshold * max(np.linalg.norm(x_next), 1e-12)
    if not confident:
        log.debug("low-confidence control estimate (residual %.3e)", residual)
    return ControlEstimate(u, residual, bool(confident), it)
