"""Ground-truth agent behaviour and noisy full-state observations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .estimator import NoiseSpec
from .model import ParametricSystem, QuadrotorModel
from .ocp import OcpError, OcpProblem, solve_ocp

TRUTH_TOL = 1e-9


class TruthGenerationError(OcpError):
    pass


@dataclass(frozen=True)
class GoalSchedule:
    """Switch times and the goal adopted at each; the first entry is at t = 0."""

    times: tuple
    goals: tuple

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        goals = tuple(np.asarray(g, dtype=float) for g in self.goals)
        if not times or times[0] != 0:
            raise ValueError("schedule must start at t = 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("switch times must be strictly increasing")
        if len(times) != len(goals):
            raise ValueError("one goal per switch time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "goals", goals)

    @classmethod
    def fixed(cls, goal) -> "GoalSchedule":
        return cls((0,), (goal,))

    def goal_at(self, t: int) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.goals[idx]

    def goals_over(self, T: int) -> np.ndarray:
        return np.array([self.goal_at(t) for t in range(T + 1)])

    def validate(self, T: int):
        if self.times[-1] >= T:
            raise ValueError("switch times must lie in [0, T)")


@dataclass
class GroundTruthRun:
    states: np.ndarray  # (T+1, n)
    controls: np.ndarray  # (T, m)
    schedule: GoalSchedule
    observations: np.ndarray | None = None
    seed: int | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.controls.shape[0]

    def goals(self) -> np.ndarray:
        return self.schedule.goals_over(self.T)

    def to_json(self) -> str:
        return json.dumps({
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
            "switch_times": list(self.schedule.times),
            "goals": [g.tolist() for g in self.schedule.goals],
            "observations": None if self.observations is None else self.observations.tolist(),
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthRun":
        d = json.loads(text)
        obs = d.get("observations")
        return cls(states=np.array(d["states"]), controls=np.array(d["controls"]),
                   schedule=GoalSchedule(d["switch_times"], d["goals"]),
                   observations=None if obs is None else np.array(obs), seed=d.get("seed"))


def generate_truth(system: ParametricSystem, theta_star, schedule: GoalSchedule, T: int, x0,
                   tol: float = TRUTH_TOL) -> GroundTruthRun:
    """Piecewise-optimal trajectory, replanned from the realized state at each switch."""
    schedule.validate(T)
    theta_star = np.asarray(theta_star, dtype=float)
    layout = system.layout
    states = np.empty((T + 1, system.n))
    controls = np.empty((T, system.m))
    states[0] = x0
    diagnostics = []
    bounds = list(schedule.times) + [T]
    for k, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:])):
        theta = theta_star.copy()
        theta[layout.goal] = schedule.goals[k]
        traj = solve_ocp(OcpProblem(system, theta, states[start], start, T), tol=tol)
        diagnostics.append(dict(segment=k, start=start, status=traj.status,
                                iterations=traj.iterations, grad_norm=traj.grad_norm))
        if traj.status in ("diverged", "regularization_failed") or traj.grad_norm > 1e-3:
            raise TruthGenerationError(f"agent OCP failed on segment {k}: {traj.status}", traj)
        states[start + 1: stop + 1] = traj.xs[1: stop - start + 1]
        controls[start:stop] = traj.us[: stop - start]
    return GroundTruthRun(states=states, controls=controls, schedule=schedule,
                          diagnostics=diagnostics)


def observe(x, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Full-state measurement with additive Gaussian or symmetric uniform noise."""
    x = np.asarray(x, dtype=float)
    if noise.kind == "none" or noise.sigma == 0:
        return x.copy()
    if noise.kind == "gaussian":
        return x + rng.normal(0.0, noise.sigma, x.shape)
    return x + rng.uniform(-noise.sigma, noise.sigma, x.shape)


def observe_run(run: GroundTruthRun, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    obs = np.array([observe(x, noise, rng) for x in run.states])
    run.observations = obs
    return obs


def random_goal(rng: np.random.Generator, box: float = 4.0) -> np.ndarray:
    """Rest state at a position drawn uniformly from [-box, box]^3."""
    return QuadrotorModel.rest_state(rng.uniform(-box, box, 3))
