"""Two-lane merge: configuration, dynamics/objective adapters and mode seeding."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..game import AgentObjective, ContractError, DynamicGame, DynamicsModel, RK4Dynamics, Trajectory
from . import vehicle as vk
from .spline import CenterlineSpline

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class CenterlineSingularityError(RuntimeError):
    """A vehicle reached the curvature singularity ``1 - n kappa(s) <= 0.1``."""


@dataclass(frozen=True)
class CostWeights:
    centerline: float = 1.0
    speed: float = 1.0
    boundary: float = 1000.0
    heading: float = 0.5
    steer: float = 0.5
    steer_rate: float = 0.1
    accel: float = 0.5
    collision: float = 400.0
    boundary_sharpness: float = 30.0
    terminal_scale: float = 1.0


@dataclass(frozen=True)
class MergeConfig:
    """Geometry, vehicles and costs of the merge scenario.

    Distances in meters, speeds in m/s.  Each agent drives along its own lane;
    lanes are given as ordered knot points and must coincide after the merge
    point.
    """

    lanes: tuple = ()
    merge_point: tuple = (0.0, 0.0)
    half_width: float = 0.2
    wheelbase: float = 0.33
    radius: tuple = (0.25, 0.25)
    safety_margin: float = 0.1
    v_ref: tuple = (1.5, 1.5)
    s0: tuple = (0.0, 0.0)
    v0: tuple = (1.5, 1.5)
    accel_limit: float = 2.0
    steer_rate_limit: float = 2.0
    weights: CostWeights = field(default_factory=CostWeights)

    @property
    def num_agents(self) -> int:
        return len(self.lanes)

    @classmethod
    def default(cls) -> "MergeConfig":
        return cls(lanes=default_lanes())

    @classmethod
    def from_toml(cls, path) -> "MergeConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "MergeConfig":
        data = dict(data)
        weights = CostWeights(**data.pop("weights", {}))
        lanes = data.pop("lanes", None)
        if lanes is None:
            lanes = default_lanes()
        else:
            lanes = tuple(tuple(tuple(float(c) for c in p) for p in lane["points"]) for lane in lanes)
        agents = data.pop("agents", None)
        kw = {}
        if agents is not None:
            for key in ("radius", "v_ref", "s0", "v0"):
                if all(key in a for a in agents):
                    kw[key] = tuple(float(a[key]) for a in agents)
        for key in ("merge_point",):
            if key in data:
                data[key] = tuple(data[key])
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ContractError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(lanes=lanes, weights=weights, **kw, **data)


def default_lanes(approach: float = 3.2, offset: float = 0.6, after: float = 6.0, knots: int = 17):
    """Two mirror-image lanes that start parallel ``2 * offset`` apart and blend
    into a shared straight lane at the origin."""
    tau = np.linspace(0.0, 1.0, knots)
    x_app = -approach + approach * tau
    y_app = offset * (1.0 - 3.0 * tau ** 2 + 2.0 * tau ** 3)
    x_after = np.linspace(0.0, after, 9)[1:]
    lanes = []
    for sgn in (1.0, -1.0):
        pts = np.concatenate([np.stack([x_app, sgn * y_app], 1), np.stack([x_after, 0 * x_after], 1)])
        lanes.append(tuple(map(tuple, pts)))
    return tuple(lanes)


class MergeScenario:
    """Compiled view of a :class:`MergeConfig`: splines, kernel parameters and
    merge-point arclengths."""

    def __init__(self, cfg: MergeConfig):
        if cfg.num_agents < 1:
            raise ContractError("scenario has no lanes")
        self.cfg = cfg
        self.splines = tuple(CenterlineSpline.from_points(l, cfg.half_width) for l in cfg.lanes)
        n = cfg.num_agents
        nseg = max(sp.kappa_coeffs.shape[0] for sp in self.splines)
        self.kappa_coeffs = np.zeros((n, nseg, 4))
        for i, sp in enumerate(self.splines):
            self.kappa_coeffs[i, :sp.kappa_coeffs.shape[0]] = sp.kappa_coeffs
        self.ds = np.array([sp.ds for sp in self.splines])
        self.lengths = np.array([sp.length for sp in self.splines])
        self.wheelbases = np.full(n, cfg.wheelbase)
        self.merge_s = np.array([sp.project(cfg.merge_point)[0] for sp in self.splines])
        w = cfg.weights
        self.weights = np.zeros((n, vk.N_WEIGHTS))
        for i in range(n):
            row = self.weights[i]
            row[vk.W_CENTER] = w.centerline
            row[vk.W_SPEED] = w.speed
            row[vk.W_BOUNDARY] = w.boundary
            row[vk.W_HEADING] = w.heading
            row[vk.W_STEER] = w.steer
            row[vk.W_STEER_RATE] = w.steer_rate
            row[vk.W_ACCEL] = w.accel
            row[vk.V_REF] = cfg.v_ref[i]
            row[vk.HALF_WIDTH] = cfg.half_width
            row[vk.SHARPNESS] = w.boundary_sharpness
        r = np.asarray(cfg.radius, dtype=float)
        self.contact_radii = r[:, None] + r[None, :]
        self.cost_radii = self.contact_radii + cfg.safety_margin

    @property
    def num_agents(self) -> int:
        return self.cfg.num_agents

    def dynamics(self, dt: float) -> "MergeDynamics":
        return MergeDynamics(self, dt)

    def objectives(self) -> tuple["MergeObjective", ...]:
        return tuple(MergeObjective(self, i) for i in range(self.num_agents))

    def game(self, dt: float = 0.05, horizon: int = 60) -> DynamicGame:
        return DynamicGame(self.dynamics(dt), self.objectives(), horizon=horizon, dt=dt)

    def vehicle_state(self, agent: int, s: float, v: float, n: float = 0.0) -> np.ndarray:
        sp = self.splines[agent]
        p = sp.position(s)
        th = float(sp.heading(s))
        normal = np.array([-math.sin(th), math.cos(th)])
        kap = float(sp.curvature(s))
        zeta = math.atan(self.cfg.wheelbase * kap / max(1e-6, 1.0 - n * kap))
        return np.array([*(p + n * normal), v, th, zeta, s, n, 0.0])

    def initial_state(self) -> np.ndarray:
        return np.concatenate([self.vehicle_state(i, self.cfg.s0[i], self.cfg.v0[i])
                               for i in range(self.num_agents)])

    @staticmethod
    def agent_state(x, agent: int) -> np.ndarray:
        return np.asarray(x)[vk.NX_AGENT * agent:vk.NX_AGENT * (agent + 1)]

    def position_index(self, agents) -> np.ndarray:
        return np.array([vk.NX_AGENT * a + k for a in agents for k in (vk.PX, vk.PY)])

    def check_singularity(self, x) -> None:
        for i, sp in enumerate(self.splines):
            xa = self.agent_state(x, i)
            if 1.0 - xa[vk.N] * float(sp.curvature(xa[vk.S])) <= 0.1:
                raise CenterlineSingularityError(f"agent {i} left the valid curvilinear region")

    def clip_controls(self, u) -> np.ndarray:
        u = np.array(u, dtype=float)
        u[vk.STEER_RATE::vk.NU_AGENT] = np.clip(u[vk.STEER_RATE::vk.NU_AGENT], -self.cfg.steer_rate_limit,
                                                self.cfg.steer_rate_limit)
        u[vk.ACCEL::vk.NU_AGENT] = np.clip(u[vk.ACCEL::vk.NU_AGENT], -self.cfg.accel_limit, self.cfg.accel_limit)
        return u

    def distances(self, x) -> np.ndarray:
        n = self.num_agents
        pos = np.array([self.agent_state(x, i)[[vk.PX, vk.PY]] for i in range(n)])
        return np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)

    # -- seeding -----------------------------------------------------------

    def lane_keeping_steer_rate(self, xa, agent: int, gain: float = 8.0) -> float:
        kap = float(self.splines[agent].curvature(xa[vk.S]))
        zeta_des = math.atan(self.cfg.wheelbase * kap) - 1.0 * xa[vk.N] - 1.5 * xa[vk.XI]
        return float(np.clip(gain * (zeta_des - xa[vk.ZETA]), -self.cfg.steer_rate_limit,
                             self.cfg.steer_rate_limit))

    def seed_controls(self, x0, horizon: int, dt: float, leader: int,
                      follower_speed: float = 0.4, follower_time: float = 1.6) -> np.ndarray:
        """Heuristic controls in which ``leader`` holds its reference speed and
        every other agent slows to ``follower_speed * v_ref`` for
        ``follower_time`` seconds before speeding back up."""
        dyn = self.dynamics(dt)
        n = self.num_agents
        U = np.zeros((horizon - 1, 2 * n))
        x = np.array(x0, dtype=float)
        for t in range(horizon - 1):
            for i in range(n):
                xa = self.agent_state(x, i)
                target = self.cfg.v_ref[i]
                if i != leader and t * dt < follower_time:
                    target *= follower_speed
                U[t, 2 * i + vk.STEER_RATE] = self.lane_keeping_steer_rate(xa, i)
                U[t, 2 * i + vk.ACCEL] = np.clip(2.0 * (target - xa[vk.V]), -self.cfg.accel_limit,
                                                 self.cfg.accel_limit)
            x = dyn.step(x, U[t])
        return U


def merge_costs(cfg: MergeConfig) -> tuple["MergeObjective", ...]:
    """Per-agent objectives of the merge scenario."""
    return MergeScenario(cfg).objectives()


def seed_modes(scenario: MergeScenario, x0, horizon: int = 60, dt: float = 0.05) -> tuple[Trajectory, ...]:
    """One seed per mode: mode ``z`` has agent ``z`` passing the merge point first."""
    dyn = scenario.dynamics(dt)
    seeds = []
    for leader in range(scenario.num_agents):
        U = scenario.seed_controls(x0, horizon, dt, leader)
        X = np.empty((horizon, len(x0)))
        X[0] = x0
        for t in range(horizon - 1):
            X[t + 1] = dyn.step(X[t], U[t])
        seeds.append(Trajectory(X, U))
    return tuple(seeds)


def bicycle_step(scenario: MergeScenario, agent: int, xa, ua, dt: float) -> np.ndarray:
    """One RK4 step of a single vehicle on its own lane."""
    i = agent
    out = vk.joint_step(np.asarray(xa, dtype=float), np.asarray(ua, dtype=float), float(dt),
                        scenario.wheelbases[i:i + 1], scenario.kappa_coeffs[i:i + 1], scenario.ds[i:i + 1],
                        scenario.lengths[i:i + 1])
    sp = scenario.splines[i]
    if 1.0 - out[vk.N] * float(sp.curvature(out[vk.S])) <= 0.1:
        raise CenterlineSingularityError(f"agent {i} left the valid curvilinear region")
    return out


class MergeDynamics(DynamicsModel):
    """Joint RK4-discretized bicycles, one lane per agent (compiled kernels)."""

    def __init__(self, scenario: MergeScenario, dt: float):
        self.scenario = scenario
        self.dt = float(dt)
        self.state_dim = vk.NX_AGENT * scenario.num_agents
        self.control_dims = (vk.NU_AGENT,) * scenario.num_agents
        self._args = (scenario.wheelbases, scenario.kappa_coeffs, scenario.ds, scenario.lengths)

    def step(self, x, u):
        return vk.joint_step(np.asarray(x, dtype=float), np.asarray(u, dtype=float), self.dt, *self._args)

    def jacobians(self, x, u):
        _, A, B = vk.joint_step_jac(np.asarray(x, dtype=float), np.asarray(u, dtype=float), self.dt, *self._args)
        return A, B

    def linearize(self, states, controls):
        return vk.linearize_batch(np.ascontiguousarray(states), np.ascontiguousarray(controls), self.dt,
                                  *self._args)

    def rollout_feedback(self, x0, nominal_states, nominal_controls, gains, feedforward, step_size):
        return vk.rollout_feedback(np.asarray(x0, dtype=float), np.ascontiguousarray(nominal_states),
                                   np.ascontiguousarray(nominal_controls), np.ascontiguousarray(gains),
                                   np.ascontiguousarray(feedforward), float(step_size), self.dt, *self._args)


class ReferenceMergeDynamics(RK4Dynamics):
    """Uncompiled RK4 route over the same continuous vehicle model; used to
    cross-check :class:`MergeDynamics`."""

    def __init__(self, scenario: MergeScenario, dt: float):
        self.scenario = scenario
        self.dt = float(dt)
        self.state_dim = vk.NX_AGENT * scenario.num_agents
        self.control_dims = (vk.NU_AGENT,) * scenario.num_agents

    def _agent_args(self, i):
        sc = self.scenario
        return sc.wheelbases[i], sc.kappa_coeffs[i], sc.ds[i], sc.lengths[i]

    def derivative(self, x, u):
        n = self.scenario.num_agents
        return np.concatenate([vk.agent_derivative(x[8 * i:8 * i + 8].copy(), u[2 * i:2 * i + 2].copy(),
                                                   *self._agent_args(i)) for i in range(n)])

    def derivative_jacobians(self, x, u):
        n = self.scenario.num_agents
        J = np.zeros((8 * n, 8 * n))
        G = np.zeros((8 * n, 2 * n))
        for i in range(n):
            _, Ji, Gi = vk.agent_derivative_jac(x[8 * i:8 * i + 8].copy(), u[2 * i:2 * i + 2].copy(),
                                                *self._agent_args(i))
            J[8 * i:8 * i + 8, 8 * i:8 * i + 8] = Ji
            G[8 * i:8 * i + 8, 2 * i:2 * i + 2] = Gi
        return J, G


class MergeObjective(AgentObjective):
    """Lane keeping, speed tracking, soft road boundary, control effort and
    soft pairwise collision avoidance for one agent."""

    def __init__(self, scenario: MergeScenario, agent: int):
        self.scenario = scenario
        self.agent = agent
        sc = scenario
        self._args = (agent, sc.weights, sc.cost_radii, sc.cfg.weights.collision, sc.cfg.weights.terminal_scale)

    def _eval(self, x, u, terminal):
        x = np.asarray(x, dtype=float)
        u = np.zeros(2 * self.scenario.num_agents) if u is None else np.asarray(u, dtype=float)
        return vk.stage_cost(x, u, *self._args, terminal)

    def running(self, x, u):
        return float(self._eval(x, u, False)[0])

    def terminal(self, x):
        return float(self._eval(x, None, True)[0])

    def running_derivatives(self, x, u):
        return self._eval(x, u, False)

    def terminal_derivatives(self, x):
        val, lx, _, lxx, _, _ = self._eval(x, None, True)
        return val, lx, lxx

    def quadraticize(self, states, controls):
        return vk.quadraticize_batch(np.ascontiguousarray(states), np.ascontiguousarray(controls), *self._args)


def load_scenario(path: str | Path | None) -> MergeScenario:
    cfg = MergeConfig.default() if path is None else MergeConfig.from_toml(path)
    return MergeScenario(cfg)


def mirrored(cfg: MergeConfig) -> MergeConfig:
    """Swap the two agents (the default geometry is mirror-symmetric)."""
    return replace(cfg, lanes=cfg.lanes[::-1], radius=cfg.radius[::-1], v_ref=cfg.v_ref[::-1],
                   s0=cfg.s0[::-1], v0=cfg.v0[::-1])
