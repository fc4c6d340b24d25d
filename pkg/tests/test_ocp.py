import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intentpred.estimator import init_estimator
from intentpred.experiments import _seed_streams, build_truth, get_scenario
from intentpred.model import LinearSystem, QuadrotorModel
from intentpred.ocp import OcpProblem, adjoint, shift_warm_start, solve_ocp
from intentpred.predictor import MemoryBuffer, predict_step


def riccati_lqr(A, B, r, q, x0, N):
    """Independent oracle: backward Riccati for sum r|u|^2 + q|x_N|^2, then closed-loop rollout."""
    n, m = B.shape
    P = q * np.eye(n)
    gains = []
    for _ in range(N):
        K = np.linalg.solve(r * np.eye(m) + B.T @ P @ B, B.T @ P @ A)
        P = A.T @ P @ (A - B @ K)
        gains.append(K)
    gains.reverse()
    xs, us = [np.asarray(x0, dtype=float)], []
    for K in gains:
        us.append(-K @ xs[-1])
        xs.append(A @ xs[-1] + B @ us[-1])
    return np.array(xs), np.array(us)


def scalar_problem(x0=1.0, N=2):
    sys = LinearSystem([[1.0]])
    theta = sys.theta([[1.0]], 1.0, 1.0, [0.0])
    return sys, theta, OcpProblem(sys, theta, [x0], 0, N)


def test_scalar_closed_form():
    # minimize u0^2 + u1^2 + (1 + u0 + u1)^2: u0 = u1 = -1/3
    _, _, problem = scalar_problem()
    traj = solve_ocp(problem)
    assert traj.converged
    assert np.allclose(traj.us.ravel(), [-1 / 3, -1 / 3], atol=1e-6)
    assert np.allclose(traj.xs.ravel(), [1.0, 2 / 3, 1 / 3], atol=1e-6)
    assert traj.cost == pytest.approx(1 / 3, abs=1e-9)


def test_lq_single_outer_iteration():
    _, _, problem = scalar_problem(N=6)
    traj = solve_ocp(problem, tol=1e-10)
    assert traj.converged
    # one Newton step reaches the optimum; the next iteration only confirms it
    assert traj.iterations <= 2
    assert traj.costs[1] == pytest.approx(traj.cost, abs=1e-12)


@pytest.mark.parametrize("N", [1, 5, 15])
def test_two_state_against_riccati(N):
    A = np.array([[0.9, 0.2], [-0.1, 1.05]])
    B = np.array([[1.0, 0.2], [0.0, 0.6]])
    sys = LinearSystem(A, m=2)
    x0 = np.array([0.4, 1.2])
    theta = sys.theta(B, 0.5, 3.0, [0.0, 0.0])
    traj = solve_ocp(OcpProblem(sys, theta, x0, 0, N), tol=1e-12)
    xs, us = riccati_lqr(A, B, 0.5, 3.0, x0, N)
    assert np.allclose(traj.xs, xs, atol=1e-6)
    assert np.allclose(traj.us, us, atol=1e-6)


def test_double_integrator_at_goal_stays_put():
    dt = 0.1
    sys = LinearSystem([[1.0, dt], [0.0, 1.0]])
    theta = sys.theta([[0.5 * dt ** 2], [dt]], 1.0, 1.0, [0.7, 0.0])
    traj = solve_ocp(OcpProblem(sys, theta, [0.7, 0.0], 0, 10))
    assert np.allclose(traj.us, 0.0, atol=1e-12)
    assert np.allclose(traj.xs, [0.7, 0.0], atol=1e-12)


def test_hover_to_hover_cost_bounded_by_hover_control():
    model = QuadrotorModel()
    x0 = QuadrotorModel.rest_state([1.0, -1.0, 2.0])
    theta = model.true_theta(x0)
    N = 20
    hover = np.full((N, 4), 2.5)
    j_hover = model.trajectory_cost(model.rollout(x0, hover, theta), hover, theta)
    traj = solve_ocp(OcpProblem(model, theta, x0, 0, N))
    assert traj.converged
    assert traj.cost <= j_hover + 1e-6


def test_quadrotor_solution_feasible_and_stationary():
    model = QuadrotorModel()
    x0 = QuadrotorModel.rest_state([0.0, 0.0, 0.0])
    theta = model.true_theta(QuadrotorModel.rest_state([2.0, -1.0, 1.0]))
    traj = solve_ocp(OcpProblem(model, theta, x0, 0, 15))
    assert traj.converged
    assert np.allclose(model.rollout(x0, traj.us, theta), traj.xs, atol=1e-9, rtol=0)
    _, grad = adjoint(model.lq_terms(traj.xs, traj.us, theta))
    assert np.max(np.abs(grad)) < 1e-6
    # monotone over accepted iterations
    assert np.all(np.diff(traj.costs) <= 1e-12)


def test_truncated_solve_is_feasible():
    model = QuadrotorModel()
    x0 = QuadrotorModel.rest_state([0.0, 0.0, 0.0])
    theta = model.true_theta(QuadrotorModel.rest_state([3.0, 3.0, -3.0]))
    traj = solve_ocp(OcpProblem(model, theta, x0, 0, 15), max_iter=2)
    assert not traj.converged
    assert traj.status == "max_iter"
    assert np.allclose(model.rollout(x0, traj.us, theta), traj.xs, atol=1e-9, rtol=0)


def test_solve_is_deterministic():
    model = QuadrotorModel()
    theta = model.true_theta(QuadrotorModel.rest_state([1.0, 2.0, 0.0]))
    problem = OcpProblem(model, theta, QuadrotorModel.rest_state([0, 0, 0]), 0, 12)
    a, b = solve_ocp(problem), solve_ocp(problem)
    assert np.array_equal(a.xs, b.xs) and np.array_equal(a.us, b.us)


@settings(max_examples=25)
@given(st.floats(-3, 3), st.integers(1, 8), st.floats(0.1, 5), st.floats(0.1, 5))
def test_scalar_lq_property(x0, N, r, q):
    # closed form for x+ = x + u: all controls equal, u = -q x0 / (r + q N)
    sys = LinearSystem([[1.0]])
    traj = solve_ocp(OcpProblem(sys, sys.theta([[1.0]], r, q, [0.0]), [x0], 0, N), tol=1e-12)
    assert np.allclose(traj.us.ravel(), -q * x0 / (r + q * N), atol=1e-9)


def test_problem_validation():
    sys, theta, _ = scalar_problem()
    with pytest.raises(ValueError):
        OcpProblem(sys, theta, [1.0], 3, 3)
    with pytest.raises(ValueError):
        OcpProblem(sys, theta, [np.nan], 0, 2)
    with pytest.raises(ValueError):
        OcpProblem(sys, theta[:-1], [1.0], 0, 2)


# -- warm starts ---------------------------------------------------------------------

def _solved(N=8):
    sys = LinearSystem([[1.0]])
    theta = sys.theta([[1.0]], 1.0, 1.0, [2.0])
    return sys, theta, solve_ocp(OcpProblem(sys, theta, [0.0], 0, N))


def test_shift_same_anchor_returns_prev():
    _, _, traj = _solved()
    assert shift_warm_start(traj, 0, traj.xs[0]) is traj


def test_shift_by_one_reuses_tail_and_pads():
    _, _, traj = _solved()
    shifted = shift_warm_start(traj, 1, traj.xs[1])
    assert shifted.t0 == 1
    assert shifted.horizon == traj.horizon
    assert np.array_equal(shifted.us[:-1], traj.us[1:])
    assert np.array_equal(shifted.us[-1], traj.us[-1])


def test_shift_far_anchor_is_feasible():
    sys, theta, traj = _solved()
    shifted = shift_warm_start(traj, 2, [25.0], system=sys, theta=theta)
    assert shifted.xs[0, 0] == 25.0
    assert np.allclose(sys.rollout(shifted.xs[0], shifted.us, theta), shifted.xs, atol=1e-12)


def test_shift_backwards_rejected():
    _, _, traj = _solved()
    with pytest.raises(ValueError):
        shift_warm_start(shift_warm_start(traj, 2, traj.xs[2]), 1, traj.xs[1])


@pytest.mark.slow
def test_warm_start_not_slower_than_cold_on_nominal():
    config = get_scenario("nominal")
    plant, theta_star, run = build_truth(config, 0)
    _, _, init_rng, _ = _seed_streams(0)
    obs = run.states
    state = init_estimator(plant.layout, theta_star, obs[0], init_rng)
    buffer = MemoryBuffer(config.memory_steps)
    buffer.push(obs[0])
    traj, counts = None, []
    for t in range(1, config.T + 1):
        t_hat = max(t - config.memory_steps, 0)
        cold = solve_ocp(OcpProblem(plant, state.theta, obs[t_hat], t_hat, config.T))
        out, state, traj = predict_step(plant, buffer, state, obs[t], config.T, traj)
        counts.append(out.solver_iters <= cold.iterations)
    assert np.mean(counts) >= 0.95
