import numpy as np
import pytest
from scipy.integrate import quad

from maxent_games.game import (ContractError, DynamicGame, LinearDynamics, LqApproximation, NumericalError,
                               QuadraticObjective, Trajectory, evaluate_cost, lq_approximate, rollout)
from maxent_games.lq import (IllPosedStageError, iterative_lq_solve, solve_feedback_ne_lq, solve_maxent_ne_lq)


def riccati_lqr(A, B, Q, R, Qf, T):
    """Finite-horizon discrete LQR by backward Riccati iteration."""
    P = Qf
    gains = []
    for _ in range(T - 1):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        gains.append(K)
    return gains[::-1], P


def lq_game(A, B, dims, objectives, T, x0, controls=None):
    game = DynamicGame(LinearDynamics(A, B, dims), objectives, horizon=T)
    U = np.zeros((T - 1, sum(dims))) if controls is None else controls
    return game, lq_approximate(game, rollout(game, x0, U))


@pytest.fixture
def double_integrator():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    return A, B, np.diag([1.0, 0.5]), np.array([[0.2]]), np.diag([5.0, 1.0])


def test_single_agent_reduces_to_lqr(double_integrator):
    A, B, Q, R, Qf = double_integrator
    T = 25
    _, lq = lq_game(A, B, (1,), [QuadraticObjective(Q, R, Qf)], T, [1.0, 0.0])
    (pol,), (val,) = solve_feedback_ne_lq(lq)
    gains, P0 = riccati_lqr(A, B, Q, R, Qf, T)
    np.testing.assert_allclose(pol.gains, np.array(gains), atol=1e-8, rtol=0)
    np.testing.assert_allclose(val.P[0], P0, atol=1e-8, rtol=0)


def test_decoupled_agents_solve_independent_lqrs(double_integrator, rng):
    A, B, Q, R, Qf = double_integrator
    A2 = np.array([[1.0, 0.05], [-0.1, 0.98]])
    B2 = np.array([[0.0], [0.2]])
    Q2, R2, Qf2 = np.diag([2.0, 0.1]), np.array([[1.0]]), np.eye(2)
    AJ = np.block([[A, np.zeros((2, 2))], [np.zeros((2, 2)), A2]])
    BJ = np.block([[B, np.zeros((2, 1))], [np.zeros((2, 1)), B2]])
    Z2 = np.zeros((2, 2))
    obj1 = QuadraticObjective(np.block([[Q, Z2], [Z2, Z2]]), np.diag([R[0, 0], 0.0]),
                              np.block([[Qf, Z2], [Z2, Z2]]))
    obj2 = QuadraticObjective(np.block([[Z2, Z2], [Z2, Q2]]), np.diag([0.0, R2[0, 0]]),
                              np.block([[Z2, Z2], [Z2, Qf2]]))
    T = 20
    _, lq = lq_game(AJ, BJ, (1, 1), [obj1, obj2], T, rng.standard_normal(4))
    pols, _ = solve_feedback_ne_lq(lq)
    g1, _ = riccati_lqr(A, B, Q, R, Qf, T)
    g2, _ = riccati_lqr(A2, B2, Q2, R2, Qf2, T)
    np.testing.assert_allclose(pols[0].gains[:, :, :2], np.array(g1), atol=1e-8, rtol=0)
    np.testing.assert_allclose(pols[1].gains[:, :, 2:], np.array(g2), atol=1e-8, rtol=0)
    np.testing.assert_allclose(pols[0].gains[:, :, 2:], 0.0, atol=1e-12)
    np.testing.assert_allclose(pols[1].gains[:, :, :2], 0.0, atol=1e-12)


def test_toy_p1_best_response_is_three_quarters(toy_bank):
    for m in toy_bank.modes:
        u1, u2 = m.nominal.controls[0]
        assert u1 == pytest.approx(0.75 * u2, abs=1e-9)


@pytest.mark.parametrize("z,sign", [(0, 1.0), (1, -1.0)])
def test_toy_lq_modes(toy_bank, z, sign):
    m = toy_bank.modes[z]
    assert m.converged
    u1, u2 = m.nominal.controls[0]
    assert u1 == pytest.approx(sign * 0.55, abs=0.02)
    assert u2 == pytest.approx(sign * 0.73, abs=0.02)
    assert m.policies[0].covariances[0][0, 0] == pytest.approx(0.5, abs=1e-12)
    assert m.policies[1].covariances[0][0, 0] == pytest.approx(0.53, abs=0.05)


def test_maxent_means_match_feedback_ne(toy_bank):
    lq = toy_bank.modes[0].lq
    det, _ = solve_feedback_ne_lq(lq)
    for beta in (0.1, 1.0, 1e6):
        soft, _ = solve_maxent_ne_lq(lq, beta)
        for p, q in zip(det, soft):
            assert np.array_equal(p.gains, q.gains)
            assert np.array_equal(p.feedforward, q.feedforward)


def test_covariance_is_inverse_scaled_own_hessian(toy_bank):
    lq = toy_bank.modes[0].lq
    pols, _ = solve_maxent_ne_lq(lq, 0.5)
    # P1's own curvature: control weight 1 plus tracking weight 3
    assert pols[0].covariances[0][0, 0] == pytest.approx(1.0 / (0.5 * 4.0), rel=1e-12)
    h2 = lq.R[1, 0][1, 1] + lq.QT[1][1, 1]
    assert pols[1].covariances[0][0, 0] == pytest.approx(1.0 / (0.5 * h2), rel=1e-12)


def test_doubling_beta_halves_covariances(merge_modes):
    lq = merge_modes[2][0].lq
    a, _ = solve_maxent_ne_lq(lq, 3.0)
    b, _ = solve_maxent_ne_lq(lq, 6.0)
    for p, q in zip(a, b):
        np.testing.assert_allclose(q.covariances, 0.5 * p.covariances, rtol=1e-12, atol=0)


def test_covariances_vanish_as_beta_grows(toy_bank):
    pols, _ = solve_maxent_ne_lq(toy_bank.modes[0].lq, 1e12)
    assert max(float(p.covariances.max()) for p in pols) < 1e-11


def test_one_step_value_constant_matches_quadrature():
    r, qf, beta, x0 = 0.7, 1.9, 2.5, 0.4
    obj = QuadraticObjective(np.zeros((1, 1)), [[r]], [[qf]])
    _, lq = lq_game(np.eye(1), np.eye(1), (1,), [obj], 2, [x0])
    _, (val,) = solve_maxent_ne_lq(lq, beta)

    def stage(u):
        return 0.5 * r * u ** 2 + 0.5 * qf * (x0 + u) ** 2

    z, _ = quad(lambda u: np.exp(-beta * stage(u)), -30, 30, epsabs=1e-14, epsrel=1e-13)
    assert val(0, [x0]) == pytest.approx(-np.log(z) / beta, abs=1e-6)


def test_value_terminal_constant_equals_terminal_cost(merge_modes):
    game, _, modes = merge_modes
    for m in modes:
        for i, v in enumerate(m.values):
            assert v.c[-1] == pytest.approx(game.objectives[i].terminal(m.nominal.states[-1]), rel=1e-12)
            np.testing.assert_allclose(v.P, np.swapaxes(v.P, 1, 2), atol=1e-8)


def test_lq_game_is_a_fixed_point(double_integrator, rng):
    A, B, Q, R, Qf = double_integrator
    objs = [QuadraticObjective(Q, np.diag([0.2, 0.05]), Qf), QuadraticObjective(2 * Q, np.diag([0.0, 0.3]), Qf)]
    BJ = np.hstack([B, 0.5 * B])
    game, lq = lq_game(A, BJ, (1, 1), objs, 15, [1.0, -0.5])
    sol = iterative_lq_solve(game, [1.0, -0.5], np.zeros((14, 2)), beta=2.0)
    assert sol.converged
    # one LQ solve reaches the equilibrium; the next pass only confirms it
    assert sol.iterations <= 2
    pols, _ = solve_maxent_ne_lq(lq, 2.0)
    X, U = game.dynamics.rollout_feedback(np.array([1.0, -0.5]), lq.nominal.states, lq.nominal.controls,
                                          np.concatenate([p.gains for p in pols], axis=1),
                                          np.concatenate([p.feedforward for p in pols], axis=1), 1.0)
    np.testing.assert_allclose(sol.nominal.controls, U, atol=1e-10)


def test_toy_seeds_select_modes(toy):
    game = toy.dynamic_game()
    right = iterative_lq_solve(game, toy.x0, np.array([[0.0, 1.0]]), 0.5)
    left = iterative_lq_solve(game, toy.x0, np.array([[0.0, -1.0]]), 0.5)
    assert right.nominal.controls[0, 1] > 0.7 and left.nominal.controls[0, 1] < -0.7
    assert right.stationarity < 1e-6 and left.stationarity < 1e-6


def perturbed_cost(game, sol, agent, delta):
    """Cost of ``agent`` playing its nominal plus ``delta`` open loop while the
    others follow their feedback laws."""
    dyn = game.dynamics
    X = np.empty_like(sol.nominal.states)
    X[0] = sol.nominal.states[0]
    U = np.empty_like(sol.nominal.controls)
    sl = game.control_slice(agent)
    for t in range(U.shape[0]):
        for j, pol in enumerate(sol.policies):
            sj = game.control_slice(j)
            U[t, sj] = sol.nominal.controls[t, sj] + delta[t] if j == agent else pol.mean(t, X[t])
        X[t + 1] = dyn.step(X[t], U[t])
    return evaluate_cost(game, Trajectory(X, U), agent)


def assert_local_ne(game, sol, rng, trials=20):
    for agent in range(game.num_agents):
        sl = game.control_slice(agent)
        base = perturbed_cost(game, sol, agent, np.zeros((game.horizon - 1, sl.stop - sl.start)))
        for _ in range(trials):
            d = rng.standard_normal((game.horizon - 1, sl.stop - sl.start))
            d *= 1e-3 / np.linalg.norm(d)
            assert perturbed_cost(game, sol, agent, d) >= base - 1e-6


def test_toy_modes_are_local_nash(toy, toy_bank, rng):
    for m in toy_bank.modes:
        assert_local_ne(toy.dynamic_game(), m, rng)


def test_merge_modes_are_local_nash(merge_modes, rng):
    game, _, modes = merge_modes
    for m in modes:
        assert m.converged
        assert_local_ne(game, m, rng, trials=10)


def test_singular_stage_is_ill_posed():
    # own blocks are positive but the cross terms make the stacked system [[1, 1], [1, 1]]
    nom = Trajectory(np.zeros((2, 1)), np.zeros((1, 2)))
    z = np.zeros
    R = np.array([[[[1.0, 1.0], [1.0, 0.0]]], [[[0.0, 1.0], [1.0, 1.0]]]])
    lq = LqApproximation(nom, A=np.ones((1, 1, 1)), B=np.ones((1, 1, 2)), Q=z((2, 1, 1, 1)), q=z((2, 1, 1)),
                         R=R, r=z((2, 1, 2)), S=z((2, 1, 2, 1)), l=z((2, 1)), QT=z((2, 1, 1)), qT=z((2, 1)),
                         lT=z(2), control_offsets=np.array([0, 1, 2]))
    with pytest.raises(IllPosedStageError) as err:
        solve_feedback_ne_lq(lq)
    assert err.value.stage == 0


def test_solver_contracts(toy):
    game = toy.dynamic_game()
    with pytest.raises(ContractError):
        iterative_lq_solve(game, toy.x0, np.zeros((2, 2)), 0.5)
    with pytest.raises(ContractError):
        iterative_lq_solve(game, toy.x0, np.zeros((1, 2)), 0.0)
    blowup = DynamicGame(LinearDynamics([[1e200]], [[1.0]], (1,)), [QuadraticObjective([[1.0]], [[1.0]], [[1.0]])],
                         horizon=4)
    with pytest.raises(NumericalError), np.errstate(all="ignore"):
        iterative_lq_solve(blowup, [1.0], np.zeros((3, 1)), 1.0)


def test_unconverged_solution_is_flagged(scenario):
    game = scenario.game(0.05, 60)
    from maxent_games.merge import seed_modes
    x0 = scenario.initial_state()
    sol = iterative_lq_solve(game, x0, seed_modes(scenario, x0)[0], 10.0, max_iterations=1)
    assert not sol.converged and sol.iterations == 1
    assert np.all(np.isfinite(sol.nominal.states))
