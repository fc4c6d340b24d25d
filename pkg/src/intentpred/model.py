"""Parametric system models: quadrotor and MLP dynamics, cost features, theta layout.

All dynamics and cost functions are written against ``jax.numpy`` so that the
same definition serves the integrator, the trajectory optimizer and the
sensitivity recursions. Batched derivative kernels are jit-compiled per model
instance and evaluated over horizons padded to power-of-two buckets.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

GRAVITY = 10.0
PARAM_FLOOR = 1e-8

# true values: J diag, mass, wing length, torque constant
QUAD_TRUE_DYNAMICS = (1.0, 1.0, 1.0, 1.0, 0.4, 0.01)
QUAD_TRUE_RUNNING = (0.1,)
QUAD_TRUE_FINAL = (10.0, 1.0, 5.0, 1.0)

MLP_HIDDEN = {
    2121: (68,),
    3889: (34, 68),
    5793: (34, 68, 34),
}


def bucket(n: int) -> int:
    """Padded horizon length used for compiled kernels."""
    size = 8
    while size < n:
        size *= 2
    return size


def pad_rows(a, size):
    a = np.asarray(a, dtype=float)
    if a.shape[0] == size:
        return a
    pad = np.repeat(a[-1:], size - a.shape[0], axis=0)
    return np.concatenate([a, pad], axis=0)


@dataclass(frozen=True)
class ThetaLayout:
    """Segment sizes of theta = col{p, w_r, w_f, x_g}.

    ``n_run`` may be zero when the running weights are fixed rather than
    estimated (the MLP setting keeps the running weight at a known value).
    ``floor_dyn`` is False for network weights, which may take any sign.
    """

    n_dyn: int
    n_run: int
    n_fin: int
    n_goal: int
    floor_dyn: bool = True

    @property
    def size(self) -> int:
        return self.n_dyn + self.n_run + self.n_fin + self.n_goal

    @property
    def dyn(self) -> slice:
        return slice(0, self.n_dyn)

    @property
    def run(self) -> slice:
        return slice(self.n_dyn, self.n_dyn + self.n_run)

    @property
    def fin(self) -> slice:
        a = self.n_dyn + self.n_run
        return slice(a, a + self.n_fin)

    @property
    def goal(self) -> slice:
        return slice(self.size - self.n_goal, self.size)

    @property
    def floor_mask(self) -> np.ndarray:
        """True on entries subject to the positivity floor."""
        mask = np.ones(self.size, dtype=bool)
        mask[self.goal] = False
        if not self.floor_dyn:
            mask[self.dyn] = False
        return mask

    def pack(self, p, w_r, w_f, x_g) -> np.ndarray:
        parts = [np.atleast_1d(np.asarray(v, dtype=float)).ravel() for v in (p, w_r, w_f, x_g)]
        expected = (self.n_dyn, self.n_run, self.n_fin, self.n_goal)
        for name, part, size in zip(("p", "w_r", "w_f", "x_g"), parts, expected):
            if part.size != size:
                raise ValueError(f"{name} has length {part.size}, expected {size}")
        return np.concatenate(parts)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.size},)")
        return theta[self.dyn], theta[self.run], theta[self.fin], theta[self.goal]

    def extract_goal(self, theta) -> np.ndarray:
        return self.unpack(theta)[3].copy()


# ---------------------------------------------------------------------------
# quadrotor primitives


def _omega(w):
    wx, wy, wz = w[0], w[1], w[2]
    z = jnp.zeros_like(wx)
    return jnp.array([
        [z, -wx, -wy, -wz],
        [wx, z, wz, -wy],
        [wy, -wz, z, wx],
        [wz, wy, -wx, z],
    ])


def _mixer_matrix(l_w, c):
    h = l_w / 2.0
    z = jnp.zeros_like(h)
    one = jnp.ones_like(h)
    return jnp.array([
        [one, one, one, one],
        [z, -h, z, h],
        [-h, z, h, z],
        [c, -c, c, -c],
    ])


def _rotation(q):
    """Body-to-inertial rotation matrix of a scalar-first unit quaternion."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    return jnp.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _quad_rhs(x, u, p):
    J = p[0:3]
    mass, l_w, c = p[3], p[4], p[5]
    v, q, w = x[3:6], x[6:10], x[10:13]
    wrench = _mixer_matrix(l_w, c) @ u
    thrust, torque = wrench[0], wrench[1:]
    # gravity along +z, thrust along -z_B
    force = -_rotation(q) @ jnp.array([0.0, 0.0, 1.0]) * thrust
    dv = jnp.array([0.0, 0.0, GRAVITY]) + force / mass
    dq = 0.5 * _omega(w) @ q
    dw = (torque - jnp.cross(w, J * w)) / J
    return jnp.concatenate([v, dv, dq, dw])


def omega_matrix(w) -> np.ndarray:
    """4x4 quaternion kinematics matrix such that dq/dt = 0.5 * Omega(w) q."""
    return np.asarray(_omega(jnp.asarray(w, dtype=float)))


def thrust_mixer(T, l_w: float, c: float):
    """Map propeller thrusts to (total thrust, body torque)."""
    out = np.asarray(_mixer_matrix(jnp.asarray(l_w, dtype=float), jnp.asarray(c, dtype=float))
                     @ jnp.asarray(T, dtype=float))
    return float(out[0]), out[1:]


_quad_rhs_jit = jax.jit(_quad_rhs)


def quad_derivative(x, u, p) -> np.ndarray:
    """Continuous-time quadrotor state derivative."""
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x[6:10]) - 1.0) > 1e-3:
        raise ValueError("quaternion is not normalized")
    out = np.asarray(_quad_rhs_jit(x, jnp.asarray(u, dtype=float), jnp.asarray(p, dtype=float)))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state derivative")
    return out


def _integrate(rhs, x, u, p, dt, method):
    if method == "euler":
        return x + dt * rhs(x, u, p)
    k1 = rhs(x, u, p)
    k2 = rhs(x + 0.5 * dt * k1, u, p)
    k3 = rhs(x + 0.5 * dt * k2, u, p)
    k4 = rhs(x + dt * k3, u, p)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _quad_step(x, u, p, dt, method):
    xn = _integrate(_quad_rhs, x, u, p, dt, method)
    q = xn[6:10] / jnp.linalg.norm(xn[6:10])
    return jnp.concatenate([xn[:6], q, xn[10:]])


def discrete_step(x, u, p, dt: float = 0.15, method: str = "rk4") -> np.ndarray:
    """One integration step of the quadrotor followed by quaternion renormalization."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown integrator {method!r}")
    out = np.asarray(_quad_step(jnp.asarray(x, dtype=float), jnp.asarray(u, dtype=float),
                                jnp.asarray(p, dtype=float), dt, method))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state after integration")
    return out


# ---------------------------------------------------------------------------
# MLP dynamics


def mlp_widths(n: int, m: int, hidden) -> tuple:
    return (n + m, *hidden, n)


def mlp_param_count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def _mlp_forward(widths, z, params):
    offset = 0
    h = z
    last = len(widths) - 2
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        W = params[offset:offset + a * b].reshape(b, a)
        offset += a * b
        bias = params[offset:offset + b]
        offset += b
        h = W @ h + bias
        if i < last:
            h = jnp.tanh(h)
    return h


def mlp_step(x, u, weights, hidden=(68,)) -> np.ndarray:
    """Next state predicted by a tanh MLP on the concatenated state and control."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    widths = mlp_widths(x.size, u.size, hidden)
    weights = np.asarray(weights, dtype=float)
    if weights.size != mlp_param_count(widths):
        raise ValueError(f"expected {mlp_param_count(widths)} weights, got {weights.size}")
    return np.asarray(_mlp_forward(widths, jnp.concatenate([x, u]), jnp.asarray(weights)))


# ---------------------------------------------------------------------------
# cost features


def running_features(x, u, x_g):
    """Running cost features; the quadrotor uses the squared control norm."""
    return jnp.atleast_1d(jnp.sum(jnp.asarray(u) ** 2))


FINAL_BLOCKS = ((0, 3), (3, 6), (6, 10), (10, 13))


def final_features(x, x_g):
    """Squared errors on position, velocity, quaternion and angular-rate blocks."""
    d = jnp.asarray(x) - jnp.asarray(x_g)
    return jnp.array([jnp.sum(d[a:b] ** 2) for a, b in FINAL_BLOCKS])


# ---------------------------------------------------------------------------
# generic parametric system

_KERNELS: dict = {}


class kernel:
    """Cached compiled function shared by all models with the same ``config_key``."""

    def __init__(self, build):
        self.build = build
        self.name = build.__name__

    def __get__(self, obj, owner=None):
        if obj is None:
            return self
        key = (type(obj), obj.config_key(), self.name)
        if key not in _KERNELS:
            _KERNELS[key] = self.build(obj)
        return _KERNELS[key]


class ParametricSystem:
    """Discrete dynamics x+ = f(x, u, p) with a goal-parameterized weighted cost.

    Subclasses define ``n``, ``m``, ``layout`` and the pure functions
    ``dynamics``, ``running_features``, ``final_features``; they may add a
    fixed (non-estimated) running term via ``fixed_running_cost``.
    """

    n: int
    m: int
    layout: ThetaLayout
    fixed_running_weights = None

    # -- pure model functions (jax-traceable) -----------------------------
    def dynamics(self, x, u, p):
        raise NotImplementedError

    def running_features(self, x, u, x_g):
        return running_features(x, u, x_g)

    def final_features(self, x, x_g):
        return final_features(x, x_g)

    def fixed_running_cost(self, x, u):
        return 0.0

    def running_cost(self, x, u, theta):
        L = self.layout
        feats = self.running_features(x, u, theta[L.goal])
        if L.n_run:
            w = theta[L.run]
        else:
            w = jnp.asarray(self.fixed_running_weights, dtype=float)
        return jnp.dot(w, feats) + self.fixed_running_cost(x, u)

    def final_cost(self, x, theta):
        L = self.layout
        return jnp.dot(theta[L.fin], self.final_features(x, theta[L.goal]))

    def config_key(self) -> tuple:
        """Hashable description of everything the compiled kernels depend on."""
        return (id(self),)

    def step_theta(self, x, u, theta):
        return self.dynamics(x, u, theta[self.layout.dyn])

    def initial_controls(self, theta, horizon: int) -> np.ndarray:
        return np.zeros((horizon, self.m))

    # -- compiled kernels --------------------------------------------------
    @kernel
    def _step(self):
        return jax.jit(self.dynamics)

    def step(self, x, u, p) -> np.ndarray:
        return np.asarray(self._step(jnp.asarray(x, dtype=float), jnp.asarray(u, dtype=float),
                                     jnp.asarray(p, dtype=float)))

    @kernel
    def _rollout(self):
        dyn = self.dynamics

        def rollout(x0, us, p):
            def body(x, u):
                xn = dyn(x, u, p)
                return xn, xn
            _, xs = jax.lax.scan(body, x0, us)
            return jnp.concatenate([x0[None], xs])
        return jax.jit(rollout)

    def rollout(self, x0, us, theta) -> np.ndarray:
        """Open-loop states x_0..x_N for controls u_0..u_{N-1}."""
        us = np.asarray(us, dtype=float)
        N = us.shape[0]
        p = np.asarray(theta, dtype=float)[self.layout.dyn]
        xs = self._rollout(jnp.asarray(x0, dtype=float), pad_rows(us, bucket(N)), p)
        return np.asarray(xs)[: N + 1]

    @kernel
    def _policy_rollout(self):
        dyn = self.dynamics
        run = self.running_cost
        fin = self.final_cost

        def rollout(x0, xbar, ubar, kff, Kfb, alpha, theta, N):
            p = theta[self.layout.dyn]

            def body(x, inp):
                xb, ub, k, K = inp
                u = ub + alpha * k + K @ (x - xb)
                xn = dyn(x, u, p)
                return xn, (xn, u)
            _, (xs, us) = jax.lax.scan(body, x0, (xbar[:-1], ubar, kff, Kfb))
            xs = jnp.concatenate([x0[None], xs])
            costs = jax.vmap(run, (0, 0, None))(xs[:-1], us, theta)
            mask = jnp.arange(us.shape[0]) < N
            total = jnp.sum(jnp.where(mask, costs, 0.0)) + fin(xs[N], theta)
            return xs, us, total
        return jax.jit(jax.vmap(rollout, (None, None, None, None, None, 0, None, None)))

    @kernel
    def _traj_cost(self):
        run, fin = self.running_cost, self.final_cost

        def cost(xs, us, theta, N):
            costs = jax.vmap(run, (0, 0, None))(xs[:-1], us, theta)
            mask = jnp.arange(us.shape[0]) < N
            return jnp.sum(jnp.where(mask, costs, 0.0)) + fin(xs[N], theta)
        return jax.jit(cost)

    def trajectory_cost(self, xs, us, theta) -> float:
        us = np.asarray(us, dtype=float)
        N = us.shape[0]
        B = bucket(N)
        xs = pad_rows(xs, B + 1)
        return float(self._traj_cost(xs, pad_rows(us, B), jnp.asarray(theta, dtype=float), N))

    @kernel
    def _lq_terms(self):
        """Per-step dynamics Jacobians and running-cost derivatives."""
        dyn, run = self.dynamics, self.running_cost

        def one(x, u, theta):
            p = theta[self.layout.dyn]
            F, G = jax.jacfwd(dyn, argnums=(0, 1))(x, u, p)
            lx, lu = jax.grad(run, argnums=(0, 1))(x, u, theta)
            (lxx, lxu), (lux, luu) = jax.hessian(run, argnums=(0, 1))(x, u, theta)
            return F, G, lx, lu, lxx, luu, lux
        return jax.jit(jax.vmap(one, (0, 0, None)))

    @kernel
    def _newton_terms(self):
        """As ``_lq_terms`` but with the costate-weighted curvature of the dynamics."""
        dyn, run = self.dynamics, self.running_cost

        def one(x, u, theta, lam):
            p = theta[self.layout.dyn]
            F, G = jax.jacfwd(dyn, argnums=(0, 1))(x, u, p)
            lx, lu = jax.grad(run, argnums=(0, 1))(x, u, theta)

            def ham(x, u):
                return run(x, u, theta) + jnp.dot(dyn(x, u, p), lam)
            (hxx, hxu), (hux, huu) = jax.hessian(ham, argnums=(0, 1))(x, u)
            return F, G, lx, lu, hxx, huu, hux
        return jax.jit(jax.vmap(one, (0, 0, None, 0)))

    @kernel
    def _final_terms(self):
        fin = self.final_cost

        def one(x, theta):
            return jax.grad(fin)(x, theta), jax.hessian(fin)(x, theta)
        return jax.jit(one)

    def lq_terms(self, xs, us, theta, lams_next=None):
        """Linearized dynamics and quadratized cost along a trajectory.

        With ``lams_next`` the second-order blocks are Hamiltonian Hessians,
        i.e. they include the costate-weighted curvature of the dynamics.
        """
        us = np.asarray(us, dtype=float)
        N = us.shape[0]
        B = bucket(N)
        theta = jnp.asarray(theta, dtype=float)
        xs_p, us_p = pad_rows(np.asarray(xs)[:-1], B), pad_rows(us, B)
        if lams_next is None:
            out = self._lq_terms(xs_p, us_p, theta)
        else:
            out = self._newton_terms(xs_p, us_p, theta, pad_rows(lams_next, B))
        F, G, lx, lu, lxx, luu, lux = (np.asarray(a)[:N] for a in out)
        hx, hxx = (np.asarray(a) for a in self._final_terms(jnp.asarray(xs[N]), theta))
        return dict(F=F, G=G, lx=lx, lu=lu, lxx=lxx, luu=luu, lux=lux, hx=hx, hxx=hxx)

    # -- Hamiltonian derivatives for the sensitivity recursions -------------
    def _theta_jac(self, fn, argnum):
        """Jacobian w.r.t. theta; reverse mode when theta is much larger than the output."""
        if self.layout.size > 4 * (self.n + self.m):
            return jax.jacrev(fn, argnums=argnum)
        return jax.jacfwd(fn, argnums=argnum)

    @kernel
    def _hamiltonian_terms(self):
        dyn, run = self.dynamics, self.running_cost
        L = self.layout

        def ham(x, u, theta, lam):
            return run(x, u, theta) + jnp.dot(dyn(x, u, theta[L.dyn]), lam)

        def grad_xu(x, u, theta, lam):
            gx, gu = jax.grad(ham, argnums=(0, 1))(x, u, theta, lam)
            return jnp.concatenate([gx, gu])

        def step_theta(x, u, theta):
            return dyn(x, u, theta[L.dyn])

        jac_theta = self._theta_jac(grad_xu, 2)
        E_fn = self._theta_jac(step_theta, 2)
        n = self.n

        def one(x, u, theta, lam):
            F, G = jax.jacfwd(dyn, argnums=(0, 1))(x, u, theta[L.dyn])
            gx_gu = grad_xu(x, u, theta, lam)
            hz_x, hz_u = jax.jacfwd(grad_xu, argnums=(0, 1))(x, u, theta, lam)
            hz_t = jac_theta(x, u, theta, lam)
            E = E_fn(x, u, theta)
            return dict(F=F, G=G, E=E, Hx=gx_gu[:n], Hu=gx_gu[n:],
                        Hxx=hz_x[:n], Hxu=hz_u[:n], Huu=hz_u[n:],
                        Hxt=hz_t[:n], Hut=hz_t[n:])
        return jax.jit(jax.vmap(one, (0, 0, None, 0)))

    @kernel
    def _final_theta_terms(self):
        fin = self.final_cost

        def one(x, theta):
            gx = jax.grad(fin)
            return gx(x, theta), jax.jacfwd(gx)(x, theta), jax.jacfwd(gx, argnums=1)(x, theta)
        return jax.jit(one)

    def hamiltonian_terms(self, xs, us, lams_next, theta):
        """Per-step blocks F, G, E, H_x, H_u, H_xx, H_xu, H_uu, H_xθ, H_uθ and terminal blocks.

        ``lams_next[k]`` is the costate multiplying f(x_k, u_k) in the Hamiltonian.
        """
        us = np.asarray(us, dtype=float)
        N = us.shape[0]
        B = bucket(N)
        theta_j = jnp.asarray(theta, dtype=float)
        out = self._hamiltonian_terms(pad_rows(np.asarray(xs)[:-1], B), pad_rows(us, B), theta_j,
                                      pad_rows(lams_next, B))
        out = {k: np.asarray(v)[:N] for k, v in out.items()}
        hx, hxx, hxt = self._final_theta_terms(jnp.asarray(xs[N]), theta_j)
        out.update(hx=np.asarray(hx), hxx=np.asarray(hxx), hxt=np.asarray(hxt))
        return out

    def derivatives(self, x, u, theta) -> dict:
        """All first and second derivative blocks of the dynamics and costs at one point."""
        x, u, theta = (jnp.asarray(a, dtype=float) for a in (x, u, theta))
        L = self.layout

        def f_theta(x, u, theta):
            return self.dynamics(x, u, theta[L.dyn])
        F, G, E = jax.jacfwd(f_theta, argnums=(0, 1, 2))(x, u, theta)
        lx, lu, lt = jax.grad(self.running_cost, argnums=(0, 1, 2))(x, u, theta)
        H = jax.hessian(self.running_cost, argnums=(0, 1, 2))(x, u, theta)
        hx, ht = jax.grad(self.final_cost, argnums=(0, 1))(x, theta)
        Hf = jax.hessian(self.final_cost, argnums=(0, 1))(x, theta)
        out = dict(F=F, G=G, E=E, lx=lx, lu=lu, ltheta=lt,
                   lxx=H[0][0], lxu=H[0][1], luu=H[1][1], lxtheta=H[0][2], lutheta=H[1][2],
                   hx=hx, htheta=ht, hxx=Hf[0][0], hxtheta=Hf[0][1])
        out = {k: np.asarray(v) for k, v in out.items()}
        for k, v in out.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite derivative block {k}")
        return out


def fd_derivatives(system: ParametricSystem, x, u, theta, rel_step: float = 1e-6) -> dict:
    """Central finite-difference counterparts of the first-order blocks of ``derivatives``."""
    x, u, theta = (np.asarray(a, dtype=float) for a in (x, u, theta))
    L = system.layout

    def jac(fn, z):
        out0 = np.atleast_1d(fn(z))
        J = np.zeros((out0.size, z.size))
        for i in range(z.size):
            h = rel_step * max(1.0, abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            J[:, i] = (np.atleast_1d(fn(zp)) - np.atleast_1d(fn(zm))) / (2 * h)
        return J

    f = lambda x_, u_, t_: np.asarray(system.dynamics(jnp.asarray(x_), jnp.asarray(u_), jnp.asarray(t_[L.dyn])))
    run = lambda x_, u_, t_: float(system.running_cost(jnp.asarray(x_), jnp.asarray(u_), jnp.asarray(t_)))
    fin = lambda x_, t_: float(system.final_cost(jnp.asarray(x_), jnp.asarray(t_)))
    return dict(
        F=jac(lambda z: f(z, u, theta), x),
        G=jac(lambda z: f(x, z, theta), u),
        E=jac(lambda z: f(x, u, z), theta),
        lx=jac(lambda z: run(z, u, theta), x)[0],
        lu=jac(lambda z: run(x, z, theta), u)[0],
        ltheta=jac(lambda z: run(x, u, z), theta)[0],
        hx=jac(lambda z: fin(z, theta), x)[0],
        htheta=jac(lambda z: fin(x, z), theta)[0],
    )


class QuadrotorModel(ParametricSystem):
    """Quadrotor with RK4 (or Euler) discretization and estimated J, m, l_w, c.

    ``cost="hardware"`` adds the fixed altitude-hold and control terms of the
    indoor flight scenario and makes the estimated running weight act on the
    squared planar distance to the no-fly-zone centre.
    """

    n = 13
    m = 4
    layout = ThetaLayout(6, 1, 4, 13)

    def __init__(self, dt: float = 0.15, integrator: str = "rk4", cost: str = "standard",
                 obstacle=(0.0, 5.0), altitude: float = 0.6, altitude_weight: float = 100.0,
                 control_weight: float = 0.1):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {integrator!r}")
        if cost not in ("standard", "hardware"):
            raise ValueError(f"unknown cost variant {cost!r}")
        self.dt = float(dt)
        self.integrator = integrator
        self.cost = cost
        self.obstacle = tuple(float(v) for v in obstacle)
        self.altitude = float(altitude)
        self.altitude_weight = float(altitude_weight)
        self.control_weight = float(control_weight)

    def config_key(self) -> tuple:
        return (self.dt, self.integrator, self.cost, self.obstacle, self.altitude,
                self.altitude_weight, self.control_weight)

    def dynamics(self, x, u, p):
        return _quad_step(x, u, p, self.dt, self.integrator)

    def running_features(self, x, u, x_g):
        if self.cost == "hardware":
            d = x[0:2] - jnp.asarray(self.obstacle)
            return jnp.atleast_1d(jnp.sum(d ** 2))
        return running_features(x, u, x_g)

    def fixed_running_cost(self, x, u):
        if self.cost == "hardware":
            return (self.control_weight * jnp.sum(u ** 2)
                    + self.altitude_weight * (x[2] - self.altitude) ** 2)
        return 0.0

    def true_theta(self, goal) -> np.ndarray:
        return self.layout.pack(QUAD_TRUE_DYNAMICS, QUAD_TRUE_RUNNING, QUAD_TRUE_FINAL, goal)

    def initial_controls(self, theta, horizon: int) -> np.ndarray:
        mass = float(np.asarray(theta)[3])
        return np.full((horizon, self.m), mass * GRAVITY / 4.0)

    @staticmethod
    def rest_state(position=(0.0, 0.0, 0.0)) -> np.ndarray:
        x = np.zeros(13)
        x[0:3] = position
        x[6] = 1.0
        return x


class MlpModel(ParametricSystem):
    """Neural dynamics x+ = MLP([x; u]) with tanh hidden layers.

    The running weight is known (``running_weight``) and excluded from theta,
    so theta = col{weights, w_f, x_g}.
    """

    def __init__(self, n: int = 13, m: int = 4, hidden=(68,), running_weight: float = 0.1):
        self.n = int(n)
        self.m = int(m)
        self.hidden = tuple(int(h) for h in hidden)
        self.widths = mlp_widths(self.n, self.m, self.hidden)
        self.fixed_running_weights = (float(running_weight),)
        self.layout = ThetaLayout(mlp_param_count(self.widths), 0, 4, self.n, floor_dyn=False)

    @classmethod
    def from_size(cls, size: int, **kwargs) -> "MlpModel":
        if size not in MLP_HIDDEN:
            raise ValueError(f"no MLP configuration with {size} parameters")
        return cls(hidden=MLP_HIDDEN[size], **kwargs)

    def config_key(self) -> tuple:
        return (self.widths, self.fixed_running_weights)

    def dynamics(self, x, u, p):
        return _mlp_forward(self.widths, jnp.concatenate([x, u]), p)

    def random_weights(self, rng: np.random.Generator, scale: float = 0.05) -> np.ndarray:
        return rng.uniform(-scale, scale, self.layout.n_dyn)


class LinearSystem(ParametricSystem):
    """x+ = A x + B u with the entries of B estimated; cost r|u|^2 + q|x_T - g|^2.

    theta = col{vec(B), r, q, g}. Used as a closed-form reference problem.
    """

    def __init__(self, A, m: int = 1):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        self.A = A
        self.n = A.shape[0]
        self.m = int(m)
        self.layout = ThetaLayout(self.n * self.m, 1, 1, self.n, floor_dyn=False)

    def config_key(self) -> tuple:
        return (self.A.tobytes(), self.A.shape, self.m)

    def dynamics(self, x, u, p):
        return jnp.asarray(self.A) @ x + jnp.reshape(p, (self.n, self.m)) @ u

    def final_features(self, x, x_g):
        return jnp.atleast_1d(jnp.sum((x - x_g) ** 2))

    def theta(self, B, r: float, q: float, goal) -> np.ndarray:
        return self.layout.pack(np.ravel(B), r, q, goal)
