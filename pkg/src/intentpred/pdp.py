"""Trajectory sensitivities dx/dtheta of an optimal control solution.

The backward pass builds the value-like matrices V_t, W_t from the Hamiltonian
blocks; the forward pass propagates X_t = dx_t/dtheta and U_t = du_t/dtheta
starting from X_{t0} = 0, since the anchor state is observed data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .model import ParametricSystem
from .ocp import MU_MAX, MU_MIN, Trajectory, adjoint

STATIONARITY_WARN = 1e-5
STATIONARITY_MAX = 1e-3


class SensitivityError(RuntimeError):
    pass


class StationarityError(SensitivityError):
    """The trajectory is too far from optimal for the sensitivities to be meaningful."""


@dataclass
class SensitivityBundle:
    F: np.ndarray
    G: np.ndarray
    E: np.ndarray
    Hxx: np.ndarray
    Hxu: np.ndarray
    Huu: np.ndarray
    Hxt: np.ndarray
    Hut: np.ndarray
    Vt_final: np.ndarray  # H_xx at T
    Wt_final: np.ndarray  # H_xθ at T
    lams: np.ndarray
    stationarity: float
    mu: float = 0.0
    fallback_mu: float = MU_MIN

    @property
    def horizon(self) -> int:
        return self.G.shape[0]

    @property
    def Hux(self) -> np.ndarray:
        return np.transpose(self.Hxu, (0, 2, 1))


@dataclass
class SensitivitySolution:
    X: np.ndarray  # (N+1, n, s)
    U: np.ndarray  # (N, m, s)
    V: np.ndarray  # (N+1, n, n)
    W: np.ndarray  # (N+1, n, s)
    t0: int = 0

    def state(self, t: int) -> np.ndarray:
        return self.X[t - self.t0]


def costates(system: ParametricSystem, traj: Trajectory, theta, check: bool = True):
    """Costates lam_{t0..T} and the stationarity residual max |dH/du|."""
    d = system.lq_terms(traj.xs, traj.us, theta)
    lams, grad = adjoint(d)
    resid = float(np.max(np.abs(grad))) if grad.size else 0.0
    if check and resid > STATIONARITY_MAX:
        raise StationarityError(f"stationarity residual {resid:.3g} exceeds {STATIONARITY_MAX:g}")
    return lams, resid


def build_bundle(system: ParametricSystem, traj: Trajectory, theta, mu: float | None = None,
                 check: bool = True) -> SensitivityBundle:
    """Hamiltonian second derivatives and dynamics Jacobians along ``traj``.

    ``mu`` is added to H_uu (default 0: the solved problem is unregularized at
    its optimum). If H_uu + mu I is not positive definite the solver's final
    regularization is used instead.
    """
    lams, resid = costates(system, traj, theta, check=check)
    blocks = system.hamiltonian_terms(traj.xs, traj.us, lams[1:], theta)
    Hxx = 0.5 * (blocks["Hxx"] + np.transpose(blocks["Hxx"], (0, 2, 1)))
    Huu = 0.5 * (blocks["Huu"] + np.transpose(blocks["Huu"], (0, 2, 1)))
    return SensitivityBundle(
        F=blocks["F"], G=blocks["G"], E=blocks["E"], Hxx=Hxx, Hxu=blocks["Hxu"], Huu=Huu,
        Hxt=blocks["Hxt"], Hut=blocks["Hut"],
        Vt_final=0.5 * (blocks["hxx"] + blocks["hxx"].T), Wt_final=blocks["hxt"],
        lams=lams, stationarity=resid, mu=0.0 if mu is None else mu,
        fallback_mu=max(traj.mu, MU_MIN))


def _factor_huu(Huu, mu, fallback_mu):
    """Cholesky of H_uu + mu I; if not PD, damp from ``fallback_mu`` upward by 10x."""
    eye = np.eye(Huu.shape[0])
    try:
        return cho_factor(Huu + mu * eye)
    except np.linalg.LinAlgError:
        pass
    reg = max(mu, fallback_mu)
    while reg <= MU_MAX:
        try:
            return cho_factor(Huu + reg * eye)
        except np.linalg.LinAlgError:
            reg *= 10.0
    raise SensitivityError("H_uu is not positive definite")


def _auxiliary(b: SensitivityBundle, k: int):
    cache = b.__dict__.setdefault("_aux", {})
    if k not in cache:
        cache[k] = _compute_auxiliary(b, k)
    return cache[k]


def _compute_auxiliary(b: SensitivityBundle, k: int):
    fac = _factor_huu(b.Huu[k], b.mu, b.fallback_mu)
    F, G, E = b.F[k], b.G[k], b.E[k]
    Hux = b.Hxu[k].T
    sol = cho_solve(fac, np.hstack([Hux, G.T, b.Hut[k]]))
    n = F.shape[0]
    iHux, iGt, iHut = sol[:, :n], sol[:, n:2 * n], sol[:, 2 * n:]
    A = F - G @ iHux
    B = G @ iGt
    M = E - G @ iHut
    C = b.Hxx[k] - b.Hxu[k] @ iHux
    Nk = b.Hxt[k] - b.Hxu[k] @ iHut
    return fac, A, B, M, C, Nk


def backward_recursion(b: SensitivityBundle):
    """V_t, W_t for t = T..t0 (indexed from the horizon start)."""
    N = b.horizon
    n, s = b.Wt_final.shape
    V = np.empty((N + 1, n, n))
    W = np.empty((N + 1, n, s))
    V[N] = b.Vt_final
    W[N] = b.Wt_final
    eye = np.eye(n)
    for k in range(N - 1, -1, -1):
        _, A, B, M, C, Nk = _auxiliary(b, k)
        try:
            lu = lu_factor(eye + V[k + 1] @ B, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            raise SensitivityError(f"I + V B is singular at step {k}") from None
        if np.any(np.abs(np.diag(lu[0])) < 1e-300):
            raise SensitivityError(f"I + V B is singular at step {k}")
        Vn = C + A.T @ lu_solve(lu, V[k + 1] @ A)
        V[k] = 0.5 * (Vn + Vn.T)
        W[k] = A.T @ lu_solve(lu, W[k + 1] + V[k + 1] @ M) + Nk
    return V, W


def forward_sensitivity(b: SensitivityBundle, V, W, t0: int = 0) -> SensitivitySolution:
    N = b.horizon
    n, s = b.Wt_final.shape
    m = b.G.shape[2]
    X = np.zeros((N + 1, n, s))
    U = np.zeros((N, m, s))
    eye = np.eye(n)
    for k in range(N):
        fac, A, B, M, _, _ = _auxiliary(b, k)
        G = b.G[k]
        gamma = V[k + 1] @ A @ X[k] + V[k + 1] @ M + W[k + 1]
        inner = np.linalg.solve(eye + V[k + 1] @ B, gamma)
        U[k] = -cho_solve(fac, b.Hxu[k].T @ X[k] + b.Hut[k] + G.T @ inner)
        X[k + 1] = b.F[k] @ X[k] + G @ U[k] + b.E[k]
    return SensitivitySolution(X=X, U=U, V=V, W=W, t0=t0)


def trajectory_sensitivity(system: ParametricSystem, traj: Trajectory, theta,
                           mu: float | None = None, check: bool = True) -> SensitivitySolution:
    """dx_t/dtheta along an optimal trajectory (backward then forward pass)."""
    b = build_bundle(system, traj, theta, mu=mu, check=check)
    V, W = backward_recursion(b)
    return forward_sensitivity(b, V, W, t0=traj.t0)


def assemble_H(sens: SensitivitySolution, t: int) -> np.ndarray:
    """Jacobian of the residual l = x_obs - x_hat(theta) at time t, i.e. -X_t."""
    return -sens.state(t)
