"""Finite-horizon optimal control by iterative LQR.

States are always produced by rolling out the controls through the model, so
every returned :class:`Trajectory` is dynamically feasible whether or not the
solver converged.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import jax.numpy as jnp
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import ParametricSystem, bucket, pad_rows

MU_MIN = 1e-6
MU_MAX = 1e6
ALPHAS = 2.0 ** -np.arange(11)
FLAT_COST = 1e-13


class OcpError(RuntimeError):
    """Raised when a solve cannot produce a usable trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class OcpDivergence(OcpError):
    pass


class RegularizationFailure(OcpError):
    pass


@dataclass(frozen=True)
class OcpProblem:
    system: ParametricSystem
    theta: np.ndarray
    x0: np.ndarray
    t0: int = 0
    T: int = 1

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        x0 = np.asarray(self.x0, dtype=float)
        if theta.shape != (self.system.layout.size,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.system.layout.size},)")
        if x0.shape != (self.system.n,) or not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be a finite state vector")
        if not self.t0 < self.T:
            raise ValueError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "x0", x0)

    @property
    def horizon(self) -> int:
        return self.T - self.t0


@dataclass(frozen=True)
class Trajectory:
    """States x_{t0..T}, controls u_{t0..T-1} and solver diagnostics."""

    xs: np.ndarray
    us: np.ndarray
    cost: float
    t0: int = 0
    iterations: int = 0
    grad_norm: float = np.nan
    step_norm: float = 0.0
    converged: bool = False
    status: str = "unsolved"
    mu: float = MU_MIN
    costs: tuple = field(default=(), repr=False)
    gains: np.ndarray | None = field(default=None, repr=False)  # feedback K_k, (N, m, n)

    @property
    def horizon(self) -> int:
        return self.us.shape[0]

    @property
    def T(self) -> int:
        return self.t0 + self.horizon

    def state(self, t: int) -> np.ndarray:
        """State at absolute time index ``t``."""
        return self.xs[t - self.t0]


def adjoint(d):
    """Costates and reduced gradient dJ/du_k from linearized terms ``d``."""
    F, G, lx, lu = d["F"], d["G"], d["lx"], d["lu"]
    N = G.shape[0]
    lams = np.empty((N + 1, F.shape[1]))
    grad = np.empty_like(lu)
    lam = d["hx"]
    lams[N] = lam
    for k in range(N - 1, -1, -1):
        grad[k] = lu[k] + G[k].T @ lam
        lam = lx[k] + F[k].T @ lam
        lams[k] = lam
    return lams, grad


def _backward(d, mu):
    """Riccati sweep; returns feedforward, feedback gains or None if Q_uu + mu I is not PD."""
    F, G = d["F"], d["G"]
    lx, lu, lxx, luu, lux = d["lx"], d["lu"], d["lxx"], d["luu"], d["lux"]
    N, m = lu.shape
    n = lx.shape[1]
    kff = np.zeros((N, m))
    Kfb = np.zeros((N, m, n))
    Vx = d["hx"]
    Vxx = d["hxx"]
    eye = mu * np.eye(m)
    for k in range(N - 1, -1, -1):
        Fk, Gk = F[k], G[k]
        VG = Vxx @ Gk
        Qx = lx[k] + Fk.T @ Vx
        Qu = lu[k] + Gk.T @ Vx
        Qxx = lxx[k] + Fk.T @ Vxx @ Fk
        Quu = luu[k] + Gk.T @ VG
        Qux = lux[k] + VG.T @ Fk
        try:
            fac = cho_factor(Quu + eye)
        except np.linalg.LinAlgError:
            return None
        rhs = cho_solve(fac, np.column_stack([Qu, Qux]))
        k_ = -rhs[:, 0]
        K_ = -rhs[:, 1:]
        kff[k] = k_
        Kfb[k] = K_
        Vx = Qx + K_.T @ (Quu @ k_) + K_.T @ Qu + Qux.T @ k_
        Vxx = Qxx + K_.T @ Quu @ K_ + K_.T @ Qux + Qux.T @ K_
        Vxx = 0.5 * (Vxx + Vxx.T)
    return kff, Kfb


def _regularized_gains(d, mu):
    """Backward pass, raising mu by 10x until Q_uu + mu I is positive definite."""
    gains = _backward(d, mu)
    while gains is None and mu < MU_MAX:
        mu = min(mu * 10.0, MU_MAX)
        gains = _backward(d, mu)
    return gains, mu


def _shift_rows(a, shift: int, size: int):
    a = a[shift:]
    if a.shape[0] == 0:
        a = a[-1:]
    if a.shape[0] < size:
        a = np.concatenate([a, np.repeat(a[-1:], size - a.shape[0], axis=0)])
    return a[:size].copy()


def closed_loop_rollout(system: ParametricSystem, x0, xbar, ubar, gains, theta):
    """Roll out u_k = ubar_k + K_k (x_k - xbar_k) from ``x0``; returns (xs, us)."""
    N = ubar.shape[0]
    B = bucket(N)
    xs, us, _ = system._policy_rollout(
        jnp.asarray(x0, dtype=float), jnp.asarray(pad_rows(xbar, B + 1)), jnp.asarray(pad_rows(ubar, B)),
        jnp.zeros((B, system.m)), jnp.asarray(pad_rows(gains, B)), jnp.zeros(1), jnp.asarray(theta), N)
    return np.asarray(xs[0])[: N + 1], np.asarray(us[0])[:N]


def _initial(problem: OcpProblem, warm_start):
    """Initial (xs, us): cold-start controls, or the warm start's policy from x0."""
    N = problem.horizon
    system, theta = problem.system, problem.theta
    if warm_start is not None and warm_start.horizon != N:
        warm_start = shift_warm_start(warm_start, warm_start.t0, warm_start.xs[0], horizon=N)
    if warm_start is None:
        us = system.initial_controls(theta, N)
    elif warm_start.gains is not None and np.all(np.isfinite(warm_start.xs)):
        return closed_loop_rollout(system, problem.x0, warm_start.xs, warm_start.us,
                                   warm_start.gains, theta)
    else:
        us = np.asarray(warm_start.us, dtype=float)
    return system.rollout(problem.x0, us, theta), us


def solve_ocp(problem: OcpProblem, warm_start: Trajectory | None = None, *,
              max_iter: int = 100, tol: float = 1e-6, hessian: str = "exact",
              raise_on_failure: bool = False) -> Trajectory:
    """Minimize the weighted running and final cost from ``problem.x0`` over ``[t0, T]``.

    iLQR with exact Hamiltonian curvature (``hessian="exact"``) or the
    Gauss-Newton approximation (``"gauss-newton"``), Levenberg regularization
    on H_uu and a backtracking line search over ALPHAS evaluated in one batched
    rollout. Convergence is the sup-norm of the reduced gradient dJ/du falling
    below ``tol``. An iteration whose exact curvature cannot be regularized to
    positive definite falls back to the Gauss-Newton step.

    A warm start carrying feedback gains is replayed as the closed-loop policy
    u = ubar + K (x - xbar) from the new initial state; one whose rollout is
    not finite is replaced by the cold-start controls.
    """
    if hessian not in ("exact", "gauss-newton"):
        raise ValueError(f"unknown hessian mode {hessian!r}")
    system = problem.system
    theta = problem.theta
    theta_j = jnp.asarray(theta)
    N = problem.horizon
    B = bucket(N)
    xs, us = _initial(problem, warm_start)
    cost = system.trajectory_cost(xs, us, theta)
    if not np.isfinite(cost) and warm_start is not None:
        xs, us = _initial(problem, None)
        cost = system.trajectory_cost(xs, us, theta)
    if not np.isfinite(cost):
        traj = Trajectory(xs, us, cost, problem.t0, status="diverged")
        if raise_on_failure:
            raise OcpDivergence("initial rollout is not finite", traj)
        return traj

    mu = MU_MIN
    last_gains = None
    if warm_start is not None and warm_start.gains is not None and warm_start.gains.shape[0] == N:
        last_gains = warm_start.gains
    status = "max_iter"
    history = [cost]
    step_norm = 0.0
    gnorm = np.inf
    it = 0
    alphas = jnp.asarray(ALPHAS)
    while it < max_iter:
        d = system.lq_terms(xs, us, theta)
        lams, grad = adjoint(d)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            status = "converged"
            break
        it += 1
        gains = None
        if hessian == "exact":
            gains, mu = _regularized_gains(system.lq_terms(xs, us, theta, lams[1:]), mu)
            if gains is None:
                # far from a minimum the exact curvature can be badly indefinite;
                # take a Gauss-Newton step instead
                gains, gn_mu = _regularized_gains(d, MU_MIN)
                mu = gn_mu if gains is not None else mu
        else:
            gains, mu = _regularized_gains(d, mu)
        if gains is None:
            status = "regularization_failed"
            break
        kff, Kfb = gains
        last_gains = Kfb
        cand_x, cand_u, cand_c = system._policy_rollout(
            jnp.asarray(xs[0]), jnp.asarray(pad_rows(xs, B + 1)), jnp.asarray(pad_rows(us, B)),
            jnp.asarray(np.concatenate([kff, np.zeros((B - N, kff.shape[1]))])),
            jnp.asarray(np.concatenate([Kfb, np.zeros((B - N,) + Kfb.shape[1:])])),
            alphas, theta_j, N)
        cand_c = np.asarray(cand_c)
        ok = np.flatnonzero(np.isfinite(cand_c) & (cand_c < cost))
        j = ok[0] if ok.size else None
        if j is None and abs(cand_c[0] - cost) <= FLAT_COST * max(1.0, abs(cost)):
            # cost flat to roundoff: take the full step if it lowers the gradient
            trial_x = np.asarray(cand_x[0])[: N + 1]
            trial_u = np.asarray(cand_u[0])[:N]
            _, trial_grad = adjoint(system.lq_terms(trial_x, trial_u, theta))
            if np.max(np.abs(trial_grad)) < gnorm:
                j = 0
        if j is not None:
            new_us = np.asarray(cand_u[j])[:N]
            step_norm = float(np.max(np.abs(new_us - us)))
            us = new_us
            xs = np.asarray(cand_x[j])[: N + 1]
            cost = float(cand_c[j])
            history.append(cost)
            mu = max(mu / 3.0, MU_MIN)
        else:
            if mu >= MU_MAX:
                status = "stalled"
                break
            mu = min(mu * 10.0, MU_MAX)

    traj = Trajectory(xs=xs, us=us, cost=cost, t0=problem.t0, iterations=it, grad_norm=gnorm,
                      step_norm=step_norm, converged=status == "converged", status=status, mu=mu,
                      costs=tuple(history), gains=last_gains)
    if raise_on_failure and status == "regularization_failed":
        raise RegularizationFailure("H_uu could not be regularized to positive definite", traj)
    return traj


def shift_warm_start(prev: Trajectory, new_t0: int, new_x0, horizon: int | None = None,
                     system: ParametricSystem | None = None, theta=None) -> Trajectory:
    """Re-anchor a previous solution at ``new_t0``.

    States, controls and feedback gains from ``new_t0`` onward are kept and
    padded by repeating the last entry up to ``horizon`` (default: the
    previous horizon); they serve as the nominal policy for the next solve.
    With ``system`` and ``theta`` given, the states are re-simulated from
    ``new_x0`` (closed loop when gains are available).
    """
    if new_t0 < prev.t0:
        raise ValueError("new_t0 must not precede the previous start")
    horizon = prev.horizon if horizon is None else int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be positive")
    new_x0 = np.asarray(new_x0, dtype=float)
    shift = new_t0 - prev.t0
    if shift == 0 and horizon == prev.horizon and np.array_equal(new_x0, prev.xs[0]):
        return prev
    us = _shift_rows(prev.us, shift, horizon)
    xs = _shift_rows(prev.xs, shift, horizon + 1)
    gains = None if prev.gains is None else _shift_rows(prev.gains, shift, horizon)
    cost = np.nan
    if system is not None:
        if gains is not None and np.all(np.isfinite(xs)):
            xs, us = closed_loop_rollout(system, new_x0, xs, us, gains, theta)
        else:
            xs = system.rollout(new_x0, us, theta)
        cost = system.trajectory_cost(xs, us, theta)
    return replace(prev, xs=xs, us=us, cost=cost, t0=new_t0, iterations=0, converged=False,
                   status="warm_start", costs=(), gains=gains)
