"""Shifting-horizon online intention prediction.

Each step anchors an optimal-control prediction at the oldest buffered
observation, compares the predicted state with the newest observation,
differentiates the prediction with respect to theta and applies one EKF
update. ``memory=None`` keeps the whole history (the no-horizon baseline).
"""
from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimator import EstimatorError, EstimatorState, ekf_step
from .model import ParametricSystem, QuadrotorModel, ThetaLayout
from .ocp import OcpProblem, Trajectory, shift_warm_start, solve_ocp
from .pdp import SensitivityError, assemble_H, trajectory_sensitivity
from .validation import check_observations, check_state

log = logging.getLogger(__name__)

# solver outcomes whose trajectory is stationary enough to differentiate
TRUSTED_STATUSES = ("converged", "stalled")


def buffer_start(t: int, memory) -> int:
    """Index of the oldest retained observation: max(t - memory, 0)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if memory is None or (isinstance(memory, float) and math.isinf(memory)):
        return 0
    if memory < 1:
        raise ValueError("memory must be at least one step")
    return max(t - int(memory), 0)


def extract_goal(theta, layout: ThetaLayout) -> np.ndarray:
    return layout.extract_goal(theta)


@dataclass
class MemoryBuffer:
    memory: int | None
    t: int = -1
    start: int = 0
    observations: deque = field(default_factory=deque)

    def push(self, obs) -> None:
        self.t += 1
        self.observations.append(np.asarray(obs, dtype=float))
        self.start = buffer_start(self.t, self.memory)
        while len(self.observations) > self.t - self.start + 1:
            self.observations.popleft()

    @property
    def anchor(self) -> np.ndarray:
        return self.observations[0]

    @property
    def latest(self) -> np.ndarray:
        return self.observations[-1]

    def __len__(self) -> int:
        return len(self.observations)


@dataclass
class PredictionOutput:
    t: int
    t_hat: int
    theta: np.ndarray
    goal: np.ndarray
    predicted: np.ndarray  # x_hat_{t_hat+1..T}
    residual_norm: float
    solver_iters: int
    solver_status: str
    wall_ms: float
    updated: bool


def predict_step(system: ParametricSystem, buffer: MemoryBuffer, state: EstimatorState, obs,
                 T: int, warm_start: Trajectory | None = None, solver_options=None):
    """Push ``obs`` and run one predict/differentiate/update cycle.

    Returns (output, estimator state, trajectory to warm-start the next step).
    The buffer is updated in place. If the solve did not reach a stationary
    point the update is skipped and the previous estimate carried forward.
    """
    t_start = time.perf_counter()
    buffer.push(obs)
    t, t_hat = buffer.t, buffer.start
    if t > T:
        raise ValueError(f"observation index {t} beyond final time {T}")
    theta_prev = state.theta
    anchor = buffer.anchor
    if warm_start is not None:
        warm_start = shift_warm_start(warm_start, t_hat, anchor, horizon=T - t_hat)
    problem = OcpProblem(system, theta_prev, anchor, t_hat, T)
    traj = solve_ocp(problem, warm_start, **(solver_options or {}))
    x_hat = traj.state(t)
    residual = buffer.latest - x_hat
    updated = False
    if traj.status not in TRUSTED_STATUSES or not np.all(np.isfinite(residual)):
        log.warning("step %d: prediction not trusted (%s); estimator not updated", t, traj.status)
    else:
        try:
            sens = trajectory_sensitivity(system, traj, theta_prev)
            H = assemble_H(sens, t)
            state, _ = ekf_step(state, H, residual, system.layout)
            updated = True
        except (SensitivityError, EstimatorError) as exc:
            log.warning("step %d: update skipped (%s)", t, exc)
    out = PredictionOutput(
        t=t, t_hat=t_hat, theta=state.theta.copy(),
        goal=extract_goal(state.theta, system.layout),
        predicted=traj.xs[1:], residual_norm=float(np.linalg.norm(residual)),
        solver_iters=traj.iterations, solver_status=traj.status,
        wall_ms=1e3 * (time.perf_counter() - t_start), updated=updated)
    if not np.all(np.isfinite(traj.xs)):
        traj = warm_start
    return out, state, traj


class IntentionPredictor(BaseEstimator):
    """Online goal-state estimator with a sliding observation window.

    Parameters
    ----------
    system : ParametricSystem
        Model whose dynamics/objective parameters and goal are estimated.
        Defaults to the quadrotor.
    final_time : int
        Index T at which the observed agent's horizon ends.
    memory : int or None
        Memory time in steps; None keeps every observation.
    theta0 : array-like, optional
        Initial parameter guess. Its goal segment is replaced by the first
        observation when ``goal_from_first_obs`` is set.
    P0, R0 : array-like
        Initial parameter covariance and measurement covariance.
    max_iter, tol : solver settings forwarded to the trajectory optimizer.

    Attributes
    ----------
    theta_ : current parameter estimate
    goal_ : current goal estimate
    P_ : current covariance
    history_ : list of PredictionOutput, one per processed step
    """

    def __init__(self, system=None, final_time=100, memory=10, theta0=None, P0=None, R0=None,
                 goal_from_first_obs=True, max_iter=100, tol=1e-6):
        self.system = system
        self.final_time = final_time
        self.memory = memory
        self.theta0 = theta0
        self.P0 = P0
        self.R0 = R0
        self.goal_from_first_obs = goal_from_first_obs
        self.max_iter = max_iter
        self.tol = tol

    def _system(self) -> ParametricSystem:
        return self.system if self.system is not None else QuadrotorModel()

    def _start(self, first_obs):
        system = self._system()
        layout = system.layout
        if self.theta0 is None or self.P0 is None or self.R0 is None:
            raise ValueError("theta0, P0 and R0 must be provided")
        theta = np.array(self.theta0, dtype=float)
        if theta.shape != (layout.size,):
            raise ValueError(f"theta0 has shape {theta.shape}, expected ({layout.size},)")
        first_obs = check_state(first_obs, system.n)
        if self.goal_from_first_obs:
            theta[layout.goal] = first_obs
        self.system_ = system
        self.estimator_ = EstimatorState(theta=theta, P=np.array(self.P0, dtype=float),
                                         R=np.array(self.R0, dtype=float))
        self.buffer_ = MemoryBuffer(self.memory)
        self.buffer_.push(first_obs)
        self.trajectory_ = None
        self.history_ = []

    def partial_fit(self, observation, y=None):
        """Consume one observation; the first call initializes the estimator."""
        if not hasattr(self, "estimator_"):
            self._start(observation)
            return self
        obs = check_state(observation, self.system_.n)
        out, self.estimator_, self.trajectory_ = predict_step(
            self.system_, self.buffer_, self.estimator_, obs, self.final_time,
            warm_start=self.trajectory_, solver_options=dict(max_iter=self.max_iter, tol=self.tol))
        self.history_.append(out)
        return self

    def fit(self, X, y=None):
        """Process an observation stream x_0..x_t (rows) from scratch."""
        X = check_observations(X, self._system().n)
        for attr in ("estimator_", "buffer_", "trajectory_", "history_", "system_"):
            self.__dict__.pop(attr, None)
        for row in X:
            self.partial_fit(row)
        return self

    @property
    def theta_(self) -> np.ndarray:
        check_is_fitted(self, "estimator_")
        return self.estimator_.theta

    @property
    def P_(self) -> np.ndarray:
        check_is_fitted(self, "estimator_")
        return self.estimator_.P

    @property
    def goal_(self) -> np.ndarray:
        return extract_goal(self.theta_, self.system_.layout)

    def predict(self, X=None) -> np.ndarray:
        """Current goal estimate; with ``X``, the estimates after each of its rows."""
        check_is_fitted(self, "estimator_")
        if X is None:
            return self.goal_
        goals = []
        for row in check_observations(X, self.system_.n):
            self.partial_fit(row)
            goals.append(self.goal_)
        return np.array(goals)

    def goal_history(self) -> np.ndarray:
        """Goal estimates after each processed step t = 1, 2, ..."""
        check_is_fitted(self, "estimator_")
        return np.array([out.goal for out in self.history_]).reshape(-1, self.system_.layout.n_goal)

    def score(self, X, y) -> float:
        """Negative mean squared goal error over the stream ``X`` against true goals ``y``."""
        self.fit(X)
        y = np.asarray(y, dtype=float)
        est = np.array([out.goal for out in self.history_])
        return -float(np.mean(np.sum((est - y[1:len(est) + 1]) ** 2, axis=1)))
