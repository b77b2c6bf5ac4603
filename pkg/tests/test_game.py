import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxent_games.game import (AgentObjective, ContractError, DynamicGame, LinearDynamics, NumericalError,
                               QuadraticObjective, Trajectory, evaluate_cost, lq_approximate, pd_shift, rollout,
                               single_integrator)
from maxent_games.merge import MergeConfig, MergeScenario
from maxent_games.merge import vehicle as vk
from maxent_games.merge.scenario import ReferenceMergeDynamics


def central_jacobian(f, z, h=1e-6):
    cols = []
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        cols.append((f(z + e) - f(z - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def assert_rel_close(actual, expected, rtol):
    scale = max(1.0, float(np.max(np.abs(expected))))
    assert np.max(np.abs(actual - expected)) <= rtol * scale


class _Zero(AgentObjective):
    def running(self, x, u):
        return 0.0

    def terminal(self, x):
        return 0.0


def random_merge_point(scenario, rng):
    """A state near the default lanes with both cars in a plausible pose."""
    x = scenario.initial_state()
    for i in range(2):
        s = rng.uniform(0.5, 3.0)
        xa = scenario.vehicle_state(i, s, rng.uniform(0.5, 2.0), rng.uniform(-0.1, 0.1))
        xa[vk.XI] = rng.uniform(-0.1, 0.1)
        xa[vk.THETA] += xa[vk.XI]
        xa[vk.ZETA] += rng.uniform(-0.1, 0.1)
        x[8 * i:8 * i + 8] = xa
    return x, rng.uniform(-1, 1, 4)


# -- rollout ----------------------------------------------------------------


def test_rollout_single_integrator():
    game = DynamicGame(single_integrator((1,)), (_Zero(),), horizon=3)
    traj = rollout(game, [0.0], [[1.0], [1.0]])
    np.testing.assert_array_equal(traj.states.ravel(), [0.0, 1.0, 2.0])


def test_rollout_toy_first_step(toy):
    traj = rollout(toy.dynamic_game(), toy.x0, [[0.55, 0.73]])
    np.testing.assert_allclose(traj.states[1], [0.55, 0.73])


def test_bicycle_straight_line_zero_controls():
    lanes = (((-1.0, 0.0), (1.0, 0.0), (3.0, 0.0), (5.0, 0.0)), ((-1.0, 2.0), (1.0, 2.0), (3.0, 2.0), (5.0, 2.0)))
    sc = MergeScenario(MergeConfig(lanes=lanes, merge_point=(3.0, 0.0), v0=(1.0, 1.0)))
    game = sc.game(0.05, 11)
    traj = rollout(game, sc.initial_state(), np.zeros((10, 4)))
    X = traj.states
    np.testing.assert_allclose(np.diff(X[:, vk.PX]), 0.05, atol=1e-9)
    np.testing.assert_allclose(X[:, vk.PY], 0.0, atol=1e-9)


def test_rollout_rejects_bad_shapes(toy):
    game = toy.dynamic_game()
    with pytest.raises(ContractError):
        rollout(game, toy.x0, np.zeros((2, 2)))
    with pytest.raises(ContractError):
        rollout(game, np.zeros(3), np.zeros((1, 2)))


def test_rollout_is_idempotent(scenario, rng):
    game = scenario.game(0.05, 30)
    traj = rollout(game, scenario.initial_state(), 0.3 * rng.standard_normal((29, 4)))
    again = rollout(game, traj.states[0], traj.controls)
    assert np.array_equal(traj.states, again.states)


def test_game_contracts():
    with pytest.raises(ContractError):
        DynamicGame(single_integrator((1,)), (_Zero(),), horizon=1)
    with pytest.raises(ContractError):
        DynamicGame(single_integrator((1,)), (_Zero(),), horizon=3, dt=0.0)
    with pytest.raises(ContractError):
        DynamicGame(single_integrator((1, 1)), (_Zero(),), horizon=3)
    game = DynamicGame(single_integrator((2, 1)), (_Zero(), _Zero()), horizon=3)
    assert game.control_dim == 3
    assert game.control_slice(1) == slice(2, 3)


# -- costs ------------------------------------------------------------------


def test_zero_costs_evaluate_to_zero():
    game = DynamicGame(single_integrator((1,)), (_Zero(),), horizon=4)
    assert evaluate_cost(game, rollout(game, [0.0], np.ones((3, 1))), 0) == 0.0


def test_toy_costs(toy):
    game = toy.dynamic_game()
    traj = rollout(game, toy.x0, [[0.55, 0.73]])
    assert evaluate_cost(game, traj, 0) == pytest.approx(0.5 * 0.55 ** 2 + 1.5 * (0.55 - 0.73) ** 2)
    assert evaluate_cost(game, traj, 0) == pytest.approx(0.200, abs=5e-4)
    a, b = 1.5 * (0.73 - 1) ** 2, 1.5 * (0.73 + 1) ** 2 + 0.1
    expected = 0.5 * 0.73 ** 2 - np.log(np.exp(-a) + np.exp(-b))
    assert evaluate_cost(game, traj, 1) == pytest.approx(expected, rel=1e-12)


def test_cost_is_additive_over_time(scenario, rng):
    game = scenario.game(0.05, 20)
    traj = rollout(game, scenario.initial_state(), 0.2 * rng.standard_normal((19, 4)))
    for agent in range(2):
        obj = game.objectives[agent]
        split = 7
        head = sum(obj.running(traj.states[t], traj.controls[t]) for t in range(split))
        tail = sum(obj.running(traj.states[t], traj.controls[t]) for t in range(split, 19))
        total = head + tail + obj.terminal(traj.states[-1])
        assert total == pytest.approx(evaluate_cost(game, traj, agent), rel=1e-12)


# -- LQ approximation -------------------------------------------------------


def test_lq_approximation_of_lq_game_is_exact(rng):
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0, 0.0], [0.1, 0.2]])
    dyn = LinearDynamics(A, B, (1, 1))
    objs = []
    for _ in range(2):
        M = rng.standard_normal((2, 2))
        objs.append(QuadraticObjective(M @ M.T + np.eye(2), np.diag(rng.uniform(1, 2, 2)), np.eye(2)))
    game = DynamicGame(dyn, objs, horizon=5)
    traj = rollout(game, [1.0, -1.0], rng.standard_normal((4, 2)))
    lq = lq_approximate(game, traj)
    for t in range(4):
        np.testing.assert_array_equal(lq.A[t], A)
        np.testing.assert_array_equal(lq.B[t], B)
        for i, obj in enumerate(objs):
            np.testing.assert_array_equal(lq.Q[i, t], obj.Q)
            np.testing.assert_array_equal(lq.R[i, t], obj.R)
            # the linearization residual of linear dynamics vanishes
            np.testing.assert_allclose(traj.states[t + 1], A @ traj.states[t] + B @ traj.controls[t])
    assert np.all(lq.regularization == 0)


def test_toy_p2_total_own_curvature(toy):
    game = toy.dynamic_game()
    lq = lq_approximate(game, rollout(game, toy.x0, [[0.55, 0.73]]))
    # control quadratic plus the smooth-min curvature seen through x2 = u2
    total = lq.R[1, 0][1, 1] + (lq.B[0].T @ lq.QT[1] @ lq.B[0])[1, 1]
    assert total == pytest.approx(3.60, abs=5e-3)
    assert lq.QT[1][1, 1] == pytest.approx(2.60, abs=5e-3)


def test_bicycle_jacobians_match_finite_differences(scenario, rng):
    dyn = scenario.dynamics(0.05)
    for _ in range(5):
        x, u = random_merge_point(scenario, rng)
        A, B = dyn.jacobians(x, u)
        assert_rel_close(A, central_jacobian(lambda z: dyn.step(z, u), x), 1e-5)
        assert_rel_close(B, central_jacobian(lambda w: dyn.step(x, w), u), 1e-5)


def test_compiled_dynamics_match_reference_rk4(scenario, rng):
    fast, ref = scenario.dynamics(0.05), ReferenceMergeDynamics(scenario, 0.05)
    for _ in range(5):
        x, u = random_merge_point(scenario, rng)
        np.testing.assert_allclose(fast.step(x, u), ref.step(x, u), atol=1e-12)
        for a, b in zip(fast.jacobians(x, u), ref.jacobians(x, u)):
            np.testing.assert_allclose(a, b, atol=1e-10)


def _exact_stage(scenario, agent, x, u, terminal=False):
    w = scenario.cfg.weights
    return vk.stage_cost(x, u, agent, scenario.weights, scenario.cost_radii, w.collision, w.terminal_scale,
                         terminal, True)


@pytest.mark.parametrize("near_contact", [False, True])
def test_merge_cost_derivatives_match_finite_differences(scenario, rng, near_contact):
    for _ in range(4):
        x, u = random_merge_point(scenario, rng)
        if near_contact:
            x[8:10] = x[0:2] + rng.uniform(0.15, 0.3) * np.array([np.cos(rng.uniform(0, 6)), np.sin(rng.uniform(0, 6))])
        for agent in range(2):
            for terminal in (False, True):
                val, lx, lu, lxx, luu, lux = _exact_stage(scenario, agent, x, u, terminal)
                f = lambda z: _exact_stage(scenario, agent, z, u, terminal)[0]
                gx = lambda z: _exact_stage(scenario, agent, z, u, terminal)[1]
                gu = lambda w: _exact_stage(scenario, agent, x, w, terminal)[2]
                assert_rel_close(lx, central_jacobian(lambda z: np.array([f(z)]), x, 1e-5)[0], 1e-4)
                assert_rel_close(lxx, central_jacobian(gx, x, 1e-5), 1e-4)
                assert_rel_close(luu, central_jacobian(gu, u, 1e-5), 1e-4)
                assert_rel_close(lux, central_jacobian(lambda z: _exact_stage(scenario, agent, z, u, terminal)[2],
                                                       x, 1e-5), 1e-4)


def test_gauss_newton_collision_curvature_differs_only_in_contact(scenario, rng):
    obj = scenario.objectives()[0]
    x, u = random_merge_point(scenario, rng)
    x[8:10] = x[0:2] + [5.0, 0.0]
    np.testing.assert_array_equal(obj.running_derivatives(x, u)[3], _exact_stage(scenario, 0, x, u)[3])
    x[8:10] = x[0:2] + [0.2, 0.0]
    gn, exact = obj.running_derivatives(x, u)[3], _exact_stage(scenario, 0, x, u)[3]
    diff = gn - exact
    assert np.all(diff[2:8, :] == 0) and np.any(diff[:2, :2] != 0)
    # the kept part is positive semidefinite in the relative position
    assert np.linalg.eigvalsh(gn[np.ix_([0, 1, 8, 9], [0, 1, 8, 9])])[0] > -1e-9


def test_toy_objective_derivatives(toy):
    game = toy.dynamic_game()
    for x2 in np.linspace(-2, 2, 9):
        _, g, H = game.objectives[1].terminal_derivatives(np.array([0.0, x2]))
        fd = (toy.phi2(x2 + 1e-5) - toy.phi2(x2 - 1e-5)) / 2e-5
        assert g[1] == pytest.approx(fd, rel=1e-4, abs=1e-8)
        fd2 = (toy.phi2_derivatives(x2 + 1e-5)[1] - toy.phi2_derivatives(x2 - 1e-5)[1]) / 2e-5
        assert H[1, 1] == pytest.approx(fd2, rel=1e-4, abs=1e-8)


class _Concave(AgentObjective):
    def running_derivatives(self, x, u):
        return 0.0, np.zeros(1), np.zeros(1), np.zeros((1, 1)), -np.eye(1), np.zeros((1, 1))

    def terminal_derivatives(self, x):
        return 0.0, np.zeros(1), np.zeros((1, 1))


class _BadAt(AgentObjective):
    def __init__(self, stage):
        self.stage = stage

    def running_derivatives(self, x, u):
        v = np.nan if abs(x[0] - self.stage) < 1e-9 else 0.0
        return v, np.zeros(1), np.zeros(1), np.zeros((1, 1)), np.eye(1), np.zeros((1, 1))

    def terminal_derivatives(self, x):
        return 0.0, np.zeros(1), np.zeros((1, 1))


def test_own_control_hessian_is_regularized():
    game = DynamicGame(single_integrator((1,)), (_Concave(),), horizon=3)
    lq = lq_approximate(game, rollout(game, [0.0], np.zeros((2, 1))))
    assert np.allclose(lq.R[0, :, 0, 0], 1e-6)
    assert np.allclose(lq.regularization, 1.0 + 1e-6)
    assert pd_shift(np.diag([2.0, -0.5])) == pytest.approx(0.5 + 1e-6)
    assert pd_shift(np.eye(2)) == 0.0


def test_non_finite_derivatives_report_stage():
    game = DynamicGame(single_integrator((1,)), (_BadAt(2.0),), horizon=4)
    with pytest.raises(NumericalError) as err:
        lq_approximate(game, rollout(game, [0.0], np.ones((3, 1))))
    assert err.value.stage == 2


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_trajectory_shapes_are_enforced(vals):
    traj = Trajectory(np.zeros((3, 2)), np.array(vals).reshape(2, 2))
    assert traj.horizon == 3
    with pytest.raises(ContractError):
        Trajectory(np.zeros((3, 2)), np.array(vals).reshape(4, 1)[:1])
