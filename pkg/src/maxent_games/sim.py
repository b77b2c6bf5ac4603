"""Receding-horizon closed-loop merge simulation.

Three logical loops share one clock: a slow loop re-solving the bank of local
equilibria, a belief/strategy loop at the control step, and a fast tracking
loop integrating the vehicles under each agent's affine tracking law.
Control application may be delayed and the other agent's acceleration
perturbed.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .game import ContractError, NumericalError, Trajectory
from .inference import Belief, ModeBank, naive_belief_update, prior_belief
from .lq import iterative_lq_solve
from .merge import vehicle as vk
from .merge.scenario import CenterlineSingularityError, MergeConfig, MergeScenario, bicycle_step, seed_modes
from .planner import EgoDecision, ObservedStep, Strategy, plan_step

log = logging.getLogger(__name__)

OUTCOMES = ("success", "collision", "freeze", "timeout")
STATE_FIELDS = ("px", "py", "v", "theta", "zeta", "s", "n", "xi")
CONTROL_FIELDS = ("steer_rate", "accel")
STRATEGY_ORDER = (Strategy.YIELD, Strategy.NOYIELD, Strategy.ML, Strategy.QMDP)


@dataclass(frozen=True)
class Perturbation:
    """Additive disturbance on the other agent's acceleration."""

    kind: str = "none"        # none | sin | rand
    amplitude: float = 0.0    # sin: m/s^2
    period: float = 1.5       # sin: s
    sigma: float = 0.0        # rand: m/s^2 per control step

    def __post_init__(self):
        if self.kind not in ("none", "sin", "rand"):
            raise ContractError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "sin" and not self.period > 0:
            raise ContractError("sinusoidal perturbation needs a positive period")
        if self.sigma < 0:
            raise ContractError("perturbation sigma must be nonnegative")

    @classmethod
    def parse(cls, text: str, accel_limit: float = 2.0) -> "Perturbation":
        """``none``, ``sin``, ``sin:A,P`` or ``rand:S``."""
        text = text.strip().lower()
        if text in ("", "none"):
            return cls()
        kind, _, args = text.partition(":")
        vals = [float(a) for a in args.split(",") if a.strip()]
        if kind == "sin":
            amp = vals[0] if vals else 0.5 * accel_limit
            period = vals[1] if len(vals) > 1 else 1.5
            return cls("sin", amplitude=amp, period=period)
        if kind == "rand":
            if len(vals) != 1:
                raise ContractError("rand perturbation takes one value, rand:S")
            return cls("rand", sigma=vals[0])
        raise ContractError(f"cannot parse perturbation {text!r}")

    def value(self, time_s: float, rng: np.random.Generator) -> float:
        if self.kind == "sin":
            return self.amplitude * math.sin(2.0 * math.pi * time_s / self.period)
        if self.kind == "rand":
            return self.sigma * float(rng.standard_normal())
        return 0.0


@dataclass(frozen=True)
class EpisodeConfig:
    """One closed-loop episode.  Agent 0 is the ego, agent 1 the other agent.

    ``rates`` are (equilibrium re-solve, belief and strategy, tracking) in Hz;
    the belief rate must be the control rate ``1 / dt`` or an integer fraction
    of it, the tracking rate an integer multiple of it.
    """

    strategies: tuple = (Strategy.QMDP, Strategy.NOYIELD)
    seed: int = 0
    beta: float = 10.0
    dt: float = 0.05
    horizon: int = 60
    max_steps: int = 120
    latency_steps: int = 0
    perturbation: Perturbation = field(default_factory=Perturbation)
    rates: tuple = (2.0, 20.0, 100.0)
    process_noise: float = 1e-3
    naive_sigma: float = 0.1
    naive_reset: bool = True           # naive filter restarts with every new bank
    scheduler: str = "multirate"       # multirate | sequential | threaded
    solve_tol: float = 1e-3            # receding-horizon re-solves need not be polished
    clear_distance: float = 1.0
    freeze_speed_ratio: float = 0.1
    freeze_seconds: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(Strategy.parse(s) for s in self.strategies))
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if self.latency_steps < 0:
            raise ContractError("latency_steps must be nonnegative")
        if self.horizon < 2 or self.max_steps < 0:
            raise ContractError("horizon must be at least 2 and max_steps nonnegative")
        if self.scheduler not in ("multirate", "sequential", "threaded"):
            raise ContractError(f"unknown scheduler {self.scheduler!r}")
        if len(self.rates) != 3 or min(self.rates) <= 0:
            raise ContractError("rates must be three positive frequencies")
        self.periods()

    def periods(self) -> tuple[int, int, int]:
        """(control steps per re-solve, control steps per belief update,
        tracking substeps per control step)."""
        if self.scheduler == "sequential":
            return 1, 1, 1
        ne, belief, track = self.rates
        ne_every = 1.0 / (ne * self.dt)
        belief_every = 1.0 / (belief * self.dt)
        substeps = track * self.dt
        out = []
        for name, v in (("ne", ne_every), ("belief", belief_every), ("track", substeps)):
            r = round(v)
            if r < 1 or abs(v - r) > 1e-6 * max(1.0, v):
                raise ContractError(f"{name} rate is incompatible with dt={self.dt}")
            out.append(int(r))
        return tuple(out)


@dataclass
class EpisodeLog:
    """Per control step records of one episode."""

    config: EpisodeConfig
    times: np.ndarray
    states: np.ndarray            # (steps, nx), state at the start of each step
    controls: np.ndarray          # (steps, nu), controls applied at the start of each step
    commanded: np.ndarray         # (steps, nu), controls before latency and perturbation
    beliefs: np.ndarray           # (steps, N, Z), each agent's belief (degenerate if it does not infer)
    naive_beliefs: np.ndarray     # (steps, Z), the ego's naive position-likelihood filter
    mode_costs: np.ndarray        # (steps, Z, N), nominal costs of the active bank
    ne_seconds: np.ndarray        # (steps,), re-solve wall time (0 when no solve)
    policy_seconds: np.ndarray    # (steps, N)
    banks: list = field(default_factory=list)   # (t_solve, (Z, T, nx) nominal states)
    prior: np.ndarray | None = None             # (Z,), belief before the first observation
    outcome: str = "timeout"
    min_distance: float = math.inf
    error: str = ""

    @property
    def num_steps(self) -> int:
        return self.times.size

    @property
    def num_agents(self) -> int:
        return self.beliefs.shape[1]

    def summary(self) -> dict:
        strat = [s.label for s in self.config.strategies]
        return {"ego": strat[0], "other": strat[1], "seed": self.config.seed, "outcome": self.outcome,
                "steps": int(self.num_steps), "min_distance": float(self.min_distance),
                "error": self.error}


def control_total_variation(log_or_controls, agent: int = 0, channel: int | str = vk.ACCEL) -> float:
    """``sum_t |u_{t+1} - u_t|`` of one control channel of one agent."""
    if isinstance(channel, str):
        channel = CONTROL_FIELDS.index(channel)
    if isinstance(log_or_controls, EpisodeLog):
        u = log_or_controls.controls[:, vk.NU_AGENT * agent + channel]
    else:
        u = np.asarray(log_or_controls, dtype=float)
    if u.size < 2:
        raise ContractError("total variation needs at least two steps")
    return float(np.sum(np.abs(np.diff(u))))


# ---------------------------------------------------------------------------
# Mode banks
# ---------------------------------------------------------------------------


def leading_agent(scenario: MergeScenario, states: np.ndarray) -> int:
    """Agent that reaches its merge point first along a trajectory; if nobody
    reaches it, the one closest to it at the end."""
    margin = states[:, vk.S::vk.NX_AGENT] - scenario.merge_s
    passed = margin > 0.0
    if np.any(passed):
        first = int(np.argmax(np.any(passed, axis=1)))
        return int(np.argmax(np.where(passed[first], margin[first], -np.inf)))
    return int(np.argmax(margin[-1]))


def _shifted(traj: Trajectory, steps: int, horizon: int) -> np.ndarray:
    U = traj.controls[min(steps, traj.controls.shape[0]):]
    pad = horizon - 1 - U.shape[0]
    if pad > 0:
        last = traj.controls[-1:] if U.shape[0] == 0 else U[-1:]
        U = np.concatenate([U, np.repeat(last, pad, axis=0)])
    return np.array(U[:horizon - 1])


class BankSolver:
    """Solves one local equilibrium per agent-goes-first mode from a state,
    warm-starting from the previous bank and falling back to the heuristic
    seed when the warm start lands in the wrong mode."""

    def __init__(self, scenario: MergeScenario, beta: float, dt: float, horizon: int, tol: float = 1e-5):
        self.scenario = scenario
        self.beta = float(beta)
        self.tol = float(tol)
        self.game = scenario.game(dt, horizon)
        self.position_index = [np.array([vk.NX_AGENT * a + vk.PX, vk.NX_AGENT * a + vk.PY])
                               for a in range(scenario.num_agents)]

    def _solve(self, x, seed, z):
        try:
            return iterative_lq_solve(self.game, x, seed, self.beta, mode=z, tol=self.tol)
        except NumericalError as exc:
            log.debug("mode %d solve failed: %s", z, exc)
            return None

    def _rank(self, sol, z) -> int:
        """0 for a converged solution in mode ``z``, then wrong-mode or
        unconverged ones, worst when both."""
        if sol is None:
            return 4
        return 2 * int(leading_agent(self.scenario, sol.nominal.states) != z) + int(not sol.converged)

    def solve(self, x, t: int, previous: ModeBank | None = None) -> ModeBank:
        start = time.perf_counter()
        x = np.asarray(x, dtype=float)
        T = self.game.horizon
        heuristic = None
        modes = []
        # once someone is through the merge point, or a mode already collapsed
        # onto the other ordering, re-seeding heuristically cannot recover it
        decided = bool(np.any(x[vk.S::vk.NX_AGENT] > self.scenario.merge_s))
        collapsed = previous.meta.get("collapsed", ()) if previous is not None else ()
        for z in range(self.scenario.num_agents):
            candidates = []
            if previous is not None:
                candidates.append(self._solve(x, _shifted(previous.modes[z].nominal, t - previous.t_solve, T), z))
            retry = not candidates or (self._rank(candidates[0], z) > 0 and not decided and z not in collapsed)
            if retry:
                if heuristic is None:
                    heuristic = seed_modes(self.scenario, x, T, self.game.dt)
                candidates.append(self._solve(x, heuristic[z], z))
            candidates = [c for c in candidates if c is not None]
            if not candidates:
                raise NumericalError(f"no equilibrium found for mode {z}")
            modes.append(min(candidates, key=lambda c: self._rank(c, z)))
        collapsed = tuple(z for z, m in enumerate(modes) if leading_agent(self.scenario, m.nominal.states) != z)
        return ModeBank(tuple(modes), x, t, time.perf_counter() - start,
                        meta={"position_index": self.position_index, "collapsed": collapsed})


# ---------------------------------------------------------------------------
# Episode
# ---------------------------------------------------------------------------


@dataclass
class _Command:
    """A decision on its way to the actuators, with its own-state reference
    propagated at the tracking rate."""

    decision: EgoDecision
    step: int                 # control step at which it was decided
    gain_own: np.ndarray
    reference: np.ndarray     # own state predicted at each tracking substep


class _NeLoop:
    """Slow loop.  Sequential schedulers solve inline; the threaded one solves
    in a worker and publishes finished banks without blocking the fast loop."""

    def __init__(self, solver: BankSolver, threaded: bool):
        self.solver = solver
        self.pool = ThreadPoolExecutor(max_workers=1) if threaded else None
        self.pending = None

    def request(self, x, t, bank):
        if self.pool is None:
            return self.solver.solve(x, t, bank)
        if self.pending is None:
            self.pending = self.pool.submit(self.solver.solve, np.array(x), t, bank)
        return None

    def poll(self):
        if self.pending is not None and self.pending.done():
            fut, self.pending = self.pending, None
            return fut.result()
        return None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown(wait=True, cancel_futures=True)


def run_episode(cfg: EpisodeConfig, scenario: MergeScenario | MergeConfig | None = None) -> EpisodeLog:
    """Simulate one episode of the two-agent merge."""
    if scenario is None:
        scenario = MergeScenario(MergeConfig.default())
    elif isinstance(scenario, MergeConfig):
        scenario = MergeScenario(scenario)
    n_agents = scenario.num_agents
    if len(cfg.strategies) != n_agents:
        raise ContractError(f"need one strategy per agent ({n_agents})")
    ne_every, belief_every, substeps = cfg.periods()
    h_track = cfg.dt / substeps
    rng = np.random.default_rng(cfg.seed)
    solver = BankSolver(scenario, cfg.beta, cfg.dt, cfg.horizon, cfg.solve_tol)
    est_dyn = scenario.dynamics(cfg.dt * belief_every)
    ne_loop = _NeLoop(solver, cfg.scheduler == "threaded")

    nx = vk.NX_AGENT * n_agents
    nu = vk.NU_AGENT * n_agents
    steps = cfg.max_steps
    Z = n_agents
    rec_t = np.zeros(steps)
    rec_x = np.zeros((steps, nx))
    rec_u = np.zeros((steps, nu))
    rec_cmd = np.zeros((steps, nu))
    rec_b = np.zeros((steps, n_agents, Z))
    rec_naive = np.zeros((steps, Z))
    rec_cost = np.zeros((steps, Z, n_agents))
    rec_ne = np.zeros(steps)
    rec_pol = np.zeros((steps, n_agents))
    banks = []
    outcome, error = "timeout", ""
    min_dist = math.inf
    prior = None

    x = scenario.initial_state()
    written = 0
    try:
        bank = solver.solve(x, 0)
        rec_ne0 = bank.solve_seconds
        banks.append((0, np.stack([m.nominal.states for m in bank.modes])))
        prior = prior_belief(bank, x)
        beliefs = [prior if s.infers else None for s in cfg.strategies]
        naive = prior
        previous = [None] * n_agents
        bank_prev_tick = bank
        x_prev_tick = None
        t_prev_tick = None
        queues = [deque() for _ in range(n_agents)]
        decisions = [None] * n_agents
        v_ref = np.asarray(scenario.cfg.v_ref)
        slow_time = 0.0
        for t in range(steps):
            # slow loop
            solved = None
            if cfg.scheduler == "threaded":
                solved = ne_loop.poll()
                if t > 0 and t % ne_every == 0:
                    ne_loop.request(x, t, bank)
            elif t > 0 and t % ne_every == 0:
                try:
                    solved = ne_loop.request(x, t, bank)
                except NumericalError as exc:
                    log.info("re-solve at step %d failed, keeping stale bank: %s", t, exc)
            if solved is not None:
                bank = solved
                if cfg.naive_reset:
                    naive = Belief.uniform(Z)
                rec_ne[t] = bank.solve_seconds
                banks.append((bank.t_solve, np.stack([m.nominal.states for m in bank.modes])))
            if t == 0:
                rec_ne[0] = rec_ne0

            # belief and strategy loop
            if t % belief_every == 0:
                prev = None if x_prev_tick is None else ObservedStep(x_prev_tick, t_prev_tick, bank_prev_tick)
                for i, strat in enumerate(cfg.strategies):
                    b_i = beliefs[i] if strat.infers else Belief.uniform(Z)
                    dec, b_new, _, _ = plan_step(strat, x, t, b_i, bank, ego=i, previous=prev, dyn=est_dyn,
                                                 resolve_period=ne_every)
                    if strat.infers:
                        beliefs[i] = b_new
                    dec = replace(dec, solve_seconds=bank.solve_seconds)
                    decisions[i] = dec
                    rec_pol[t, i] = dec.policy_seconds
                    queues[i].append(_make_command(scenario, i, dec, t, x, h_track,
                                                   substeps * (cfg.latency_steps + belief_every)))
                if x_prev_tick is not None:
                    naive = naive_belief_update(naive, bank, x, cfg.naive_sigma, t, ego=0)
                x_prev_tick, t_prev_tick, bank_prev_tick = x.copy(), t, bank

            # tracking loop with actuation delay
            cmds = []
            for i in range(n_agents):
                q = queues[i]
                # newest command that has cleared the delay; before any has, the first one
                while len(q) > 1 and q[1].step + cfg.latency_steps <= t:
                    q.popleft()
                cmds.append(q[0])
            rec_t[t] = t * cfg.dt
            rec_x[t] = x
            rec_cost[t] = np.array([[float(m.lq.lT[i] + m.lq.l[i].sum()) for i in range(n_agents)]
                                    for m in bank.modes])
            for i in range(n_agents):
                rec_b[t, i] = beliefs[i].probs if beliefs[i] is not None else decisions[i].belief.probs
            rec_naive[t] = naive.probs
            written = t + 1
            disturbance = cfg.perturbation.value(t * cfg.dt, rng)
            for j in range(substeps):
                u = np.empty(nu)
                for i in range(n_agents):
                    cmd = cmds[i]
                    idx = min((t - cmd.step) * substeps + j, cmd.reference.shape[0] - 1)
                    xa = scenario.agent_state(x, i)
                    u[vk.NU_AGENT * i:vk.NU_AGENT * (i + 1)] = (cmd.decision.control
                                                                - cmd.gain_own @ (xa - cmd.reference[idx]))
                if j == 0:
                    rec_cmd[t] = np.concatenate([d.control for d in decisions])
                for i in range(1, n_agents):
                    u[vk.NU_AGENT * i + vk.ACCEL] += disturbance
                u = scenario.clip_controls(u)
                if j == 0:
                    rec_u[t] = u
                x = np.concatenate([bicycle_step(scenario, i, scenario.agent_state(x, i),
                                                 u[vk.NU_AGENT * i:vk.NU_AGENT * (i + 1)], h_track)
                                    for i in range(n_agents)])
                d = scenario.distances(x)
                dmin = float(np.min(d[np.triu_indices(n_agents, 1)]))
                min_dist = min(min_dist, dmin)
                if np.any(d[np.triu_indices(n_agents, 1)] < scenario.contact_radii[np.triu_indices(n_agents, 1)]):
                    outcome = "collision"
                    break
            if outcome == "collision":
                break
            if cfg.process_noise > 0:
                x = x + cfg.process_noise * rng.standard_normal(nx)
            s = x[vk.S::vk.NX_AGENT]
            v = x[vk.V::vk.NX_AGENT]
            if np.all(s > scenario.merge_s + cfg.clear_distance):
                outcome = "success"
                break
            if np.all(v < cfg.freeze_speed_ratio * v_ref) and np.any(s < scenario.merge_s):
                slow_time += cfg.dt
                if slow_time > cfg.freeze_seconds:
                    outcome = "freeze"
                    break
            else:
                slow_time = 0.0
    except (NumericalError, CenterlineSingularityError) as exc:
        outcome, error = "timeout", f"{type(exc).__name__}: {exc}"
        log.info("episode aborted: %s", error)
    finally:
        ne_loop.close()

    w = written
    return EpisodeLog(cfg, rec_t[:w], rec_x[:w], rec_u[:w], rec_cmd[:w], rec_b[:w], rec_naive[:w],
                      rec_cost[:w], rec_ne[:w], rec_pol[:w], banks, None if prior is None else prior.probs,
                      outcome, min_dist, error)


def _make_command(scenario, agent, dec: EgoDecision, t, x, h, n_substeps) -> _Command:
    sl = slice(vk.NX_AGENT * agent, vk.NX_AGENT * (agent + 1))
    n_ref = n_substeps + 1
    ref = np.empty((n_ref, vk.NX_AGENT))
    ref[0] = x[sl]
    for j in range(1, n_ref):
        ref[j] = bicycle_step(scenario, agent, ref[j - 1], dec.control, h)
    return _Command(dec, t, np.ascontiguousarray(dec.gain[:, sl]), ref)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def lower_triangle_pairs(strategies=STRATEGY_ORDER) -> list[tuple[Strategy, Strategy]]:
    """(ego, other) pairs of the interaction matrix, ego row at or below the other's column."""
    strategies = [Strategy.parse(s) for s in strategies]
    return [(r, c) for i, r in enumerate(strategies) for c in strategies[:i + 1]]


def run_matrix(pairs=None, seeds: int = 10, scenario: MergeScenario | MergeConfig | None = None,
               base: EpisodeConfig | None = None, on_episode=None) -> dict:
    """Success rate of each (ego, other) pair over ``seeds`` episodes."""
    if scenario is None or isinstance(scenario, MergeConfig):
        scenario = MergeScenario(scenario or MergeConfig.default())
    base = base or EpisodeConfig()
    pairs = lower_triangle_pairs() if pairs is None else [tuple(Strategy.parse(s) for s in p) for p in pairs]
    table = {}
    for pair in pairs:
        outcomes = []
        for seed in range(seeds):
            ep = run_episode(replace(base, strategies=pair, seed=seed), scenario)
            outcomes.append(ep.outcome)
            if on_episode is not None:
                on_episode(ep)
        table[pair] = {"success_rate": outcomes.count("success") / max(seeds, 1),
                       "outcomes": {o: outcomes.count(o) for o in OUTCOMES}}
    return table


def format_matrix(table: dict) -> str:
    rows = [s for s in STRATEGY_ORDER if any(p[0] is s for p in table)]
    cols = [s for s in STRATEGY_ORDER if any(p[1] is s for p in table)]
    width = 9
    lines = ["ego \\ other".ljust(12) + "".join(c.label.rjust(width) for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            entry = table.get((r, c))
            cells.append(("" if entry is None else f"{entry['success_rate']:.1f}").rjust(width))
        lines.append(r.label.ljust(12) + "".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def csv_columns(n_agents: int = 2, num_modes: int = 2) -> list[str]:
    """Stable column order of the per-episode CSV."""
    cols = ["step", "time"]
    cols += [f"x{i}_{f}" for i in range(n_agents) for f in STATE_FIELDS]
    cols += [f"u{i}_{f}" for i in range(n_agents) for f in CONTROL_FIELDS]
    cols += [f"cmd{i}_{f}" for i in range(n_agents) for f in CONTROL_FIELDS]
    cols += [f"b{i}_mode{z}" for i in range(n_agents) for z in range(num_modes)]
    cols += [f"naive_mode{z}" for z in range(num_modes)]
    cols += [f"cost_mode{z}_agent{i}" for z in range(num_modes) for i in range(n_agents)]
    cols += ["ne_us"] + [f"policy{i}_us" for i in range(n_agents)]
    return cols


def write_csv(ep: EpisodeLog, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, Z = ep.num_agents, ep.beliefs.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_columns(n, Z))
        for t in range(ep.num_steps):
            row = [t, f"{ep.times[t]:.6g}"]
            row += [f"{v:.9g}" for v in ep.states[t]]
            row += [f"{v:.9g}" for v in ep.controls[t]]
            row += [f"{v:.9g}" for v in ep.commanded[t]]
            row += [f"{v:.9g}" for v in ep.beliefs[t].ravel()]
            row += [f"{v:.9g}" for v in ep.naive_beliefs[t]]
            row += [f"{v:.9g}" for v in ep.mode_costs[t].ravel()]
            row += [f"{1e6 * ep.ne_seconds[t]:.1f}"] + [f"{1e6 * v:.1f}" for v in ep.policy_seconds[t]]
            w.writerow(row)
    return path


def _jsonable(obj):
    if isinstance(obj, Strategy):
        return obj.label
    if isinstance(obj, (tuple, list)):
        return [_jsonable(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def write_summary(path, summary: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path


def episode_summary(ep: EpisodeLog) -> dict:
    out = ep.summary()
    out["config"] = _jsonable(asdict(ep.config))
    ego_u = ep.controls[:, vk.ACCEL] if ep.num_steps else np.zeros(0)
    out["ego_accel_total_variation"] = float(np.sum(np.abs(np.diff(ego_u)))) if ego_u.size > 1 else 0.0
    if ep.num_steps:
        out["final_beliefs"] = ep.beliefs[-1].tolist()
        out["final_naive_belief"] = ep.naive_beliefs[-1].tolist()
        out["mean_policy_us"] = (1e6 * ep.policy_seconds.mean(axis=0)).tolist()
        solves = ep.ne_seconds[ep.ne_seconds > 0]
        out["mean_ne_solve_ms"] = float(1e3 * solves.mean()) if solves.size else 0.0
    return out
