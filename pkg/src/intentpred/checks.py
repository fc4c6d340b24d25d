"""Self-check suites: closed-form LQ references and finite-difference PDP checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LinearSystem, QuadrotorModel
from .ocp import OcpProblem, solve_ocp
from .pdp import trajectory_sensitivity

GRADCHECK_RTOL = 1e-3
GRADCHECK_ATOL = 1e-6
ORACLE_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: error {self.error:.3e} (tol {self.tol:g}) {self.detail}".rstrip()


def lq_batch_solution(A, B, r: float, q: float, x0, goal, N: int):
    """Stacked least-squares optimum of sum r|u|^2 + q|x_N - g|^2 for x+ = A x + B u.

    Returns (xs, us, dxN_dtheta) with theta ordered as col{vec(B), r, q, g}.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    x0 = np.asarray(x0, dtype=float)
    goal = np.asarray(goal, dtype=float)
    powers = [np.linalg.matrix_power(A, k) for k in range(N + 1)]
    Gam = np.hstack([powers[N - 1 - k] @ B for k in range(N)])  # x_N = A^N x0 + Gam U
    e = powers[N] @ x0 - goal
    M = r * np.eye(N * m) + q * Gam.T @ Gam
    U = -np.linalg.solve(M, q * Gam.T @ e)
    us = U.reshape(N, m)
    xs = [x0]
    for u in us:
        xs.append(A @ xs[-1] + B @ u)
    xs = np.array(xs)

    cols = []
    for i in range(n):
        for j in range(m):
            E = np.zeros((n, m))
            E[i, j] = 1.0
            dGam = np.hstack([powers[N - 1 - k] @ E for k in range(N)])
            dM = q * (dGam.T @ Gam + Gam.T @ dGam)
            dU = np.linalg.solve(M, -dM @ U - q * dGam.T @ e)
            cols.append(dGam @ U + Gam @ dU)
    cols.append(Gam @ np.linalg.solve(M, -U))
    cols.append(Gam @ np.linalg.solve(M, -(Gam.T @ Gam @ U + Gam.T @ e)))
    dU_dg = np.linalg.solve(M, q * Gam.T)
    dxN = np.column_stack(cols + [Gam @ dU_dg])
    return xs, us, dxN


def _lq_case(name, A, B, r, q, x0, goal, N):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    system = LinearSystem(A, m=B.shape[1])
    theta = system.theta(B, r, q, goal)
    traj = solve_ocp(OcpProblem(system, theta, np.asarray(x0, dtype=float), 0, N), tol=1e-12)
    sens = trajectory_sensitivity(system, traj, theta)
    xs, us, dxN = lq_batch_solution(A, B, r, q, x0, goal, N)
    sol_err = max(np.max(np.abs(traj.xs - xs)), np.max(np.abs(traj.us - us)))
    sens_err = float(np.max(np.abs(sens.X[-1] - dxN)))
    return [CheckResult(f"{name} solution", float(sol_err), ORACLE_TOL, f"[{traj.status}]"),
            CheckResult(f"{name} sensitivity X_T", sens_err, ORACLE_TOL)]


def lq_oracle_suite() -> list:
    """solve_ocp and the sensitivity recursion against closed-form LQ references."""
    results = []
    results += _lq_case("scalar T=2", [[1.0]], [[1.0]], 1.0, 1.0, [1.0], [0.0], 2)
    results += _lq_case("scalar T=8", [[1.0]], [[0.7]], 0.3, 2.0, [1.5], [-0.4], 8)
    dt = 0.1
    results += _lq_case("double integrator T=12", [[1.0, dt], [0.0, 1.0]], [[0.5 * dt ** 2], [dt]],
                        0.05, 4.0, [1.0, -0.5], [0.3, 0.0], 12)
    results += _lq_case("2-state 2-input T=6", [[0.9, 0.2], [-0.1, 1.05]], [[1.0, 0.2], [0.0, 0.6]],
                        0.5, 3.0, [0.4, 1.2], [-1.0, 0.5], 6)
    return results


def gradcheck_instance(seed: int, horizon: int = 10, rel_step: float = 1e-5):
    """Sensitivities of a random quadrotor OCP and their central-difference counterpart."""
    system = QuadrotorModel()
    rng = np.random.default_rng(seed)
    x0 = QuadrotorModel.rest_state(rng.uniform(-1.0, 1.0, 3))
    x0[3:6] = rng.uniform(-1.0, 1.0, 3)
    goal = QuadrotorModel.rest_state(rng.uniform(-4.0, 4.0, 3))
    theta = system.true_theta(goal) * rng.uniform(0.8, 1.2, system.layout.size)
    problem = OcpProblem(system, theta, x0, 0, horizon)
    base = solve_ocp(problem, tol=1e-13)
    sens = trajectory_sensitivity(system, base, theta)
    fd = np.zeros_like(sens.X)
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        plus, minus = theta.copy(), theta.copy()
        plus[i] += h
        minus[i] -= h
        a = solve_ocp(OcpProblem(system, plus, x0, 0, horizon), base, tol=1e-13)
        b = solve_ocp(OcpProblem(system, minus, x0, 0, horizon), base, tol=1e-13)
        fd[:, :, i] = (a.xs - b.xs) / (2 * h)
    return sens.X, fd


def gradcheck_error(X, fd) -> float:
    """Max over entries of |X - fd| / max(|fd|, atol / rtol), compared against rtol."""
    return float(np.max(np.abs(X - fd) / np.maximum(np.abs(fd), GRADCHECK_ATOL / GRADCHECK_RTOL)))


def gradcheck_suite(seeds=range(5), horizon: int = 10) -> list:
    results = []
    for seed in seeds:
        X, fd = gradcheck_instance(seed, horizon)
        results.append(CheckResult(f"pdp vs finite differences seed={seed} N={horizon}",
                                   gradcheck_error(X, fd), GRADCHECK_RTOL,
                                   f"max |dx/dtheta| {np.max(np.abs(fd)):.3g}"))
    return results
