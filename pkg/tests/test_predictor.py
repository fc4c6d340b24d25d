import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from intentpred.model import QuadrotorModel
from intentpred.plant import GoalSchedule, generate_truth
from intentpred.predictor import IntentionPredictor, MemoryBuffer, buffer_start, extract_goal

MODEL = QuadrotorModel()
GOAL = QuadrotorModel.rest_state([1.5, -1.0, 0.5])
T = 12


@pytest.fixture(scope="module")
def truth():
    return generate_truth(MODEL, MODEL.true_theta(GOAL), GoalSchedule.fixed(GOAL), T,
                          QuadrotorModel.rest_state([0.0, 0.0, 0.0]))


def covariances():
    P = np.diag(np.r_[np.full(11, 1e-7), np.full(3, 1e-4), np.full(10, 1e-7)])
    return P, 1e-9 * np.eye(13)


@pytest.mark.parametrize("t,memory,expected", [(50, 10, 40), (5, 10, 0), (0, 3, 0), (0, None, 0),
                                               (70, None, 0), (70, float("inf"), 0)])
def test_buffer_start_examples(t, memory, expected):
    assert buffer_start(t, memory) == expected


def test_buffer_start_errors():
    with pytest.raises(ValueError):
        buffer_start(-1, 5)
    with pytest.raises(ValueError):
        buffer_start(3, 0)


@given(st.integers(1, 15), st.integers(1, 60))
def test_buffer_invariants(memory, steps):
    buf = MemoryBuffer(memory)
    for t in range(steps):
        buf.push(np.full(2, float(t)))
        assert buf.start == max(t - memory, 0)
        assert len(buf) == t - buf.start + 1 <= memory + 1
        assert buf.anchor[0] == buf.start and buf.latest[0] == t


def test_extract_goal_segment():
    theta = MODEL.true_theta(GOAL)
    assert np.array_equal(extract_goal(theta, MODEL.layout), theta[11:24])
    assert np.array_equal(extract_goal(MODEL.layout.pack(*MODEL.layout.unpack(theta)), MODEL.layout), GOAL)


def test_perfect_model_has_zero_residual(truth):
    P, R = covariances()
    est = IntentionPredictor(MODEL, final_time=T, memory=4, theta0=MODEL.true_theta(GOAL), P0=P,
                             R0=R, goal_from_first_obs=False, tol=1e-10)
    est.fit(truth.states)
    assert len(est.history_) == T
    assert max(out.residual_norm for out in est.history_) < 1e-6
    assert np.allclose(est.goal_, GOAL, atol=1e-6)
    assert np.allclose(est.theta_, MODEL.true_theta(GOAL), atol=1e-6)


def test_goal_estimate_improves(truth):
    P, R = covariances()
    theta0 = MODEL.true_theta(GOAL) * np.r_[np.full(11, 1.1), np.ones(13)]
    est = IntentionPredictor(MODEL, final_time=T, memory=None, theta0=theta0, P0=P, R0=R)
    est.fit(truth.states)
    goals = est.goal_history()
    assert goals.shape == (T, 13)
    assert np.array_equal(goals[-1], est.predict())
    err0 = np.sum((truth.states[0] - GOAL) ** 2)
    assert np.sum((goals[-1] - GOAL) ** 2) < 0.5 * err0
    assert all(out.t_hat == 0 for out in est.history_)


def test_partial_fit_matches_fit(truth):
    P, R = covariances()
    kw = dict(system=MODEL, final_time=T, memory=3, theta0=MODEL.true_theta(GOAL), P0=P, R0=R)
    a = IntentionPredictor(**kw).fit(truth.states[:6])
    b = IntentionPredictor(**kw)
    for x in truth.states[:6]:
        b.partial_fit(x)
    assert np.array_equal(a.theta_, b.theta_)
    assert [o.t_hat for o in b.history_] == [0, 0, 0, 1, 2]


def test_sklearn_contract():
    P, R = covariances()
    est = IntentionPredictor(MODEL, final_time=T, memory=7, theta0=np.ones(24), P0=P, R0=R)
    params = est.get_params()
    assert params["memory"] == 7 and params["final_time"] == T
    twin = clone(est)
    assert twin.get_params()["memory"] == 7 and twin is not est
    with pytest.raises(NotFittedError):
        est.predict()


def test_input_validation(truth):
    P, R = covariances()
    est = IntentionPredictor(MODEL, final_time=T, theta0=MODEL.true_theta(GOAL), P0=P, R0=R)
    with pytest.raises(ValueError):
        est.fit(truth.states[:, :12])
    bad = truth.states[:3].copy()
    bad[1, 0] = np.nan
    with pytest.raises(ValueError):
        est.fit(bad)
    with pytest.raises(ValueError):
        IntentionPredictor(MODEL, final_time=T).fit(truth.states[:2])
    with pytest.raises(ValueError):
        IntentionPredictor(MODEL, final_time=T, theta0=np.ones(5), P0=P, R0=R).fit(truth.states[:2])


def test_observation_past_final_time(truth):
    P, R = covariances()
    est = IntentionPredictor(MODEL, final_time=2, theta0=MODEL.true_theta(GOAL), P0=P, R0=R)
    with pytest.raises(ValueError):
        est.fit(truth.states[:4])
