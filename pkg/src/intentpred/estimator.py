"""EKF-style online parameter update with positivity floors.

The parameter vector is treated as a static state observed through the
optimal-control prediction, so the predict step is the identity and each
measurement update fuses one residual l = x_obs - x_hat.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import PARAM_FLOOR, ThetaLayout

P_EIG_FLOOR = 1e-15
EIG_FLOOR_MAX_DIM = 512


class EstimatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind == "none":
            object.__setattr__(self, "sigma", 0.0)


# (kind, sigma) -> exponents of (parameters, goal position, remaining goal) for P, and of R
INIT_TABLE = {
    ("none", 0.0): (-7, -4, -7, -9),
    ("uniform", 0.1): (-8, -4, -8, -7),
    ("uniform", 0.5): (-9, -5, -9, -7),
    ("uniform", 1.0): (-11, -6, -11, -7),
    ("gaussian", 0.1): (-8, -4, -8, -7),
    ("gaussian", 0.5): (-9, -5, -9, -7),
    ("gaussian", 1.0): (-11, -6, -11, -7),
}
MLP_INIT = (-8, -5, -8, -8)


@dataclass(frozen=True)
class EstimatorState:
    theta: np.ndarray
    P: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        s = self.theta.shape[0]
        if self.P.shape != (s, s):
            raise ValueError(f"P has shape {self.P.shape}, expected ({s}, {s})")
        n = self.R.shape[0]
        if self.R.shape != (n, n):
            raise ValueError("R must be square")


def clamp_floors(theta, layout: ThetaLayout, floor: float = PARAM_FLOOR) -> np.ndarray:
    """Raise dynamics and objective entries to ``floor``; the goal is untouched."""
    theta = np.array(theta, dtype=float)
    mask = layout.floor_mask
    theta[mask] = np.maximum(theta[mask], floor)
    return theta


def _floor_eigenvalues(P):
    P = 0.5 * (P + P.T)
    if P.shape[0] > EIG_FLOOR_MAX_DIM:
        try:
            np.linalg.cholesky(P - P_EIG_FLOOR * np.eye(P.shape[0]))
            return P
        except np.linalg.LinAlgError:
            pass
    w, Q = np.linalg.eigh(P)
    if w.min() >= P_EIG_FLOOR:
        return P
    P = (Q * np.maximum(w, P_EIG_FLOOR)) @ Q.T
    return 0.5 * (P + P.T)


def kalman_gain(P, H, R):
    """K solving K (H P H' + R) = P H' by Cholesky of the innovation covariance."""
    PHt = P @ H.T
    S = H @ PHt + R
    S = 0.5 * (S + S.T)
    try:
        fac = cho_factor(S)
    except np.linalg.LinAlgError:
        raise EstimatorError("innovation covariance H P H' + R is singular") from None
    return cho_solve(fac, PHt.T).T


def ekf_step(state: EstimatorState, H, residual, layout: ThetaLayout | None = None):
    """One measurement update; returns the new state and the gain K.

    ``H`` is dl/dtheta for l = x_obs - x_hat(theta), so the parameter moves by
    -K l.
    """
    H = np.asarray(H, dtype=float)
    residual = np.asarray(residual, dtype=float)
    n, s = H.shape
    if state.theta.shape != (s,) or residual.shape != (n,) or state.R.shape != (n, n):
        raise ValueError("inconsistent dimensions in ekf_step")
    if not np.all(np.isfinite(residual)) or not np.all(np.isfinite(H)):
        raise EstimatorError("non-finite residual or Jacobian")
    K = kalman_gain(state.P, H, state.R)
    P = state.P - K @ (H @ state.P)
    P = _floor_eigenvalues(P)
    theta = state.theta - K @ residual
    if layout is not None:
        theta = clamp_floors(theta, layout)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(P))):
        raise EstimatorError("non-finite estimator update")
    return EstimatorState(theta=theta, P=P, R=state.R), K


def init_covariances(layout: ThetaLayout, noise: NoiseSpec | None = None, *, mlp: bool = False,
                     p_diag=None, r_diag=None):
    """Initial P and R from the tabulated diagonals or custom diagonals."""
    if p_diag is not None and r_diag is not None:
        P = np.diag(np.broadcast_to(np.asarray(p_diag, dtype=float), (layout.size,)))
        R = np.diag(np.broadcast_to(np.asarray(r_diag, dtype=float), (layout.n_goal,)))
        return P, R
    if mlp:
        exps = MLP_INIT
    else:
        noise = noise or NoiseSpec()
        key = (noise.kind, float(noise.sigma))
        if key not in INIT_TABLE:
            raise KeyError(f"no tabulated initialization for noise {key}; pass p_diag and r_diag")
        exps = INIT_TABLE[key]
    e_par, e_pos, e_goal, e_r = exps
    n_par = layout.size - layout.n_goal
    diag = np.concatenate([
        np.full(n_par, 10.0 ** e_par),
        np.full(3, 10.0 ** e_pos),
        np.full(layout.n_goal - 3, 10.0 ** e_goal),
    ])
    return np.diag(diag), np.eye(layout.n_goal) * 10.0 ** e_r


def perturb(values, rng: np.random.Generator, spread: float = 0.25) -> np.ndarray:
    """Multiply each entry by an independent Uniform(1 - spread, 1 + spread) draw."""
    values = np.asarray(values, dtype=float)
    return values * rng.uniform(1.0 - spread, 1.0 + spread, values.shape)


def init_estimator(layout: ThetaLayout, theta_true, first_obs, rng: np.random.Generator,
                   noise: NoiseSpec | None = None, *, spread: float = 0.25, mlp_weights=None,
                   p_diag=None, r_diag=None) -> EstimatorState:
    """Perturbed initial guess with the goal guessed as the first observed state."""
    p, w_r, w_f, _ = layout.unpack(theta_true)
    if mlp_weights is not None:
        p = np.asarray(mlp_weights, dtype=float)
    else:
        p = perturb(p, rng, spread)
    theta0 = layout.pack(p, perturb(w_r, rng, spread), perturb(w_f, rng, spread), first_obs)
    theta0 = clamp_floors(theta0, layout)
    P, R = init_covariances(layout, noise, mlp=mlp_weights is not None, p_diag=p_diag, r_diag=r_diag)
    return EstimatorState(theta=theta0, P=P, R=R)
