"""Continuous-time system models, converted nonlinearity decomposition,
and zeroth-order-hold discretization via state + sensitivity integration.

A model is specified by its continuous right-hand side f_c(t, x, u, w)
together with a decomposition

    f_c(t, x, u, w) = A_lin x + B_lin u + F_lin w + E phi(C x + D u + G w) + r

that lumps every nonlinear term into the map phi. The linear part and the
affine remainder r are constant; all trajectory-dependent structure lives
in phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DimensionError(ValueError):
    """Input dimensions do not match the model."""


class DiscretizationError(RuntimeError):
    """Integration of a discretization node failed."""


@dataclass
class SystemModel:
    name: str
    n_x: int
    n_u: int
    n_w: int
    n_p: int
    n_q: int
    f_c: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    E: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray
    phi: Callable[[np.ndarray], np.ndarray]
    A_lin: np.ndarray
    B_lin: np.ndarray
    F_lin: np.ndarray
    r_affine: np.ndarray
    # analytic Jacobians (t, x, u, w) -> (A_c, B_c, F_c); finite differences if absent
    jac: Optional[Callable] = None
    # per-coordinate box used by randomized tests, rows (low, high)
    domain: Optional[dict] = None


@dataclass
class DiscreteLinearization:
    """Per-node affine models x+ = A x + B u + F w + z, exact at the nominal."""

    A: np.ndarray  # (N, n_x, n_x)
    B: np.ndarray  # (N, n_x, n_u)
    F: np.ndarray  # (N, n_x, n_w)
    z: np.ndarray  # (N, n_x)
    f_next: np.ndarray  # (N, n_x) discrete nominal map f(t_k, x_k, u_k, 0)
    h: float

    @property
    def N(self) -> int:
        return self.A.shape[0]


def _check_dims(model: SystemModel, x, u, w) -> None:
    if len(x) != model.n_x or len(u) != model.n_u or len(w) != model.n_w:
        raise DimensionError(
            f"expected dims ({model.n_x},{model.n_u},{model.n_w}), "
            f"got ({len(x)},{len(u)},{len(w)})"
        )


def eval_dynamics(model: SystemModel, t: float, x, u, w) -> np.ndarray:
    x, u, w = np.asarray(x, float), np.asarray(u, float), np.asarray(w, float)
    _check_dims(model, x, u, w)
    return np.asarray(model.f_c(t, x, u, w), float)


def jacobians(model: SystemModel, t: float, x, u, w, fd_step: float = 1e-6):
    """Continuous-time Jacobians (A_c, B_c, F_c) at the given point.

    Uses the model's analytic Jacobians when provided, otherwise central
    finite differences with the given step.
    """
    x, u, w = np.asarray(x, float), np.asarray(u, float), np.asarray(w, float)
    _check_dims(model, x, u, w)
    if model.jac is not None:
        A, B, F = model.jac(t, x, u, w)
        return np.asarray(A, float), np.asarray(B, float), np.asarray(F, float)

    def _fd(fun, v):
        n = len(v)
        cols = []
        for i in range(n):
            dv = np.zeros(n)
            dv[i] = fd_step
            cols.append((fun(v + dv) - fun(v - dv)) / (2.0 * fd_step))
        return np.column_stack(cols) if cols else np.zeros((model.n_x, 0))

    A = _fd(lambda xv: eval_dynamics(model, t, xv, u, w), x)
    B = _fd(lambda uv: eval_dynamics(model, t, x, uv, w), u)
    F = _fd(lambda wv: eval_dynamics(model, t, x, u, wv), w)
    return A, B, F


def nonlinearity_q(model: SystemModel, x, u, w) -> np.ndarray:
    """Argument q = C x + D u + G w of the lumped nonlinearity."""
    x, u, w = np.asarray(x, float), np.asarray(u, float), np.asarray(w, float)
    _check_dims(model, x, u, w)
    return model.C @ x + model.D @ u + model.G @ w


def phi(model: SystemModel, q) -> np.ndarray:
    q = np.asarray(q, float)
    if len(q) != model.n_q:
        raise DimensionError(f"expected n_q={model.n_q}, got {len(q)}")
    return np.asarray(model.phi(q), float)


def reconstruct_dynamics(model: SystemModel, t: float, x, u, w) -> np.ndarray:
    """Evaluate the decomposition; must match eval_dynamics exactly."""
    x, u, w = np.asarray(x, float), np.asarray(u, float), np.asarray(w, float)
    q = nonlinearity_q(model, x, u, w)
    return (
        model.A_lin @ x
        + model.B_lin @ u
        + model.F_lin @ w
        + model.E @ phi(model, q)
        + model.r_affine
    )


# ---------------------------------------------------------------------------
# Integration


def integrate_step(model, t, x, u, w, h, substeps: int = 10) -> np.ndarray:
    """Propagate the state over [t, t+h] with u and w held constant (ZOH).

    Classical RK4 with fixed substeps; this defines the discrete map
    f(t, x, u, w) used throughout.
    """
    x = np.asarray(x, float).copy()
    u, w = np.asarray(u, float), np.asarray(w, float)
    dt = h / substeps
    for i in range(substeps):
        ti = t + i * dt
        k1 = model.f_c(ti, x, u, w)
        k2 = model.f_c(ti + dt / 2, x + dt / 2 * k1, u, w)
        k3 = model.f_c(ti + dt / 2, x + dt / 2 * k2, u, w)
        k4 = model.f_c(ti + dt, x + dt * k3, u, w)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def discretize_zoh(model, t_k, x_k, u_k, h, substeps: int = 10):
    """One ZOH discretization node.

    Integrates the state together with the sensitivity (variational)
    equations dA/dt = A_c A, dB/dt = A_c B + B_c, dF/dt = A_c F + F_c over
    [t_k, t_k + h]. Returns (A, B, F, z, f_next) with z chosen so that the
    affine model is exact at the nominal point: f_next = A x_k + B u_k + z.
    """
    n_x, n_u, n_w = model.n_x, model.n_u, model.n_w
    x_k = np.asarray(x_k, float)
    u_k = np.asarray(u_k, float)
    w0 = np.zeros(n_w)

    def rhs(t, y):
        x = y[:n_x]
        A = y[n_x : n_x + n_x * n_x].reshape(n_x, n_x)
        B = y[n_x + n_x * n_x : n_x + n_x * n_x + n_x * n_u].reshape(n_x, n_u)
        F = y[n_x + n_x * n_x + n_x * n_u :].reshape(n_x, n_w)
        Ac, Bc, Fc = jacobians(model, t, x, u_k, w0)
        dx = model.f_c(t, x, u_k, w0)
        return np.concatenate(
            [dx, (Ac @ A).ravel(), (Ac @ B + Bc).ravel(), (Ac @ F + Fc).ravel()]
        )

    y = np.concatenate(
        [x_k, np.eye(n_x).ravel(), np.zeros(n_x * n_u), np.zeros(n_x * n_w)]
    )
    dt = h / substeps
    t = t_k
    for _ in range(substeps):
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    if not np.all(np.isfinite(y)):
        raise DiscretizationError(f"non-finite integration state at t={t_k}")

    f_next = y[:n_x]
    A = y[n_x : n_x + n_x * n_x].reshape(n_x, n_x)
    B = y[n_x + n_x * n_x : n_x + n_x * n_x + n_x * n_u].reshape(n_x, n_u)
    F = y[n_x + n_x * n_x + n_x * n_u :].reshape(n_x, n_w)
    z = f_next - A @ x_k - B @ u_k
    return A, B, F, z, f_next


def discretize_trajectory(model, ts, xs, us, substeps: int = 10) -> DiscreteLinearization:
    """ZOH discretization nodes along a reference trajectory."""
    N = len(us)
    h = ts[1] - ts[0]
    A = np.zeros((N, model.n_x, model.n_x))
    B = np.zeros((N, model.n_x, model.n_u))
    F = np.zeros((N, model.n_x, model.n_w))
    z = np.zeros((N, model.n_x))
    f_next = np.zeros((N, model.n_x))
    for k in range(N):
        try:
            A[k], B[k], F[k], z[k], f_next[k] = discretize_zoh(
                model, ts[k], xs[k], us[k], ts[k + 1] - ts[k], substeps
            )
        except DiscretizationError as e:
            raise DiscretizationError(f"node {k}: {e}") from e
    return DiscreteLinearization(A=A, B=B, F=F, z=z, f_next=f_next, h=h)


# ---------------------------------------------------------------------------
# Shipped models


@dataclass
class UnicycleParams:
    disturbance_gain: float = 0.1


def make_unicycle(params: Optional[UnicycleParams] = None) -> SystemModel:
    """Planar unicycle (r_x, r_y, theta) with additive position disturbances.

    Nonlinearity channel: q = (theta, u_v), phi(q) = (q2 cos q1, q2 sin q1).
    """
    p = params or UnicycleParams()
    g = p.disturbance_gain

    def f_c(t, x, u, w):
        return np.array(
            [
                u[0] * np.cos(x[2]) + g * w[0],
                u[0] * np.sin(x[2]) + g * w[1],
                u[1],
            ]
        )

    def jac(t, x, u, w):
        s, c = np.sin(x[2]), np.cos(x[2])
        A = np.array([[0.0, 0.0, -u[0] * s], [0.0, 0.0, u[0] * c], [0.0, 0.0, 0.0]])
        B = np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])
        F = np.array([[g, 0.0], [0.0, g], [0.0, 0.0]])
        return A, B, F

    def phi_fn(q):
        return np.array([q[1] * np.cos(q[0]), q[1] * np.sin(q[0])])

    return SystemModel(
        name="unicycle",
        n_x=3,
        n_u=2,
        n_w=2,
        n_p=2,
        n_q=2,
        f_c=f_c,
        E=np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
        C=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
        D=np.array([[0.0, 0.0], [1.0, 0.0]]),
        G=np.zeros((2, 2)),
        phi=phi_fn,
        A_lin=np.zeros((3, 3)),
        B_lin=np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 1.0]]),
        F_lin=np.array([[g, 0.0], [0.0, g], [0.0, 0.0]]),
        r_affine=np.zeros(3),
        jac=jac,
        domain={
            "x": (np.array([-1.0, -1.0, -np.pi]), np.array([6.0, 6.0, np.pi])),
            "u": (np.array([-4.0, -2.5]), np.array([4.0, 2.5])),
            "w": (np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        },
    )


_REGISTRY: dict = {}


def register_model(name: str, factory: Callable[[], SystemModel]) -> None:
    _REGISTRY[name] = factory


def get_model(name: str) -> SystemModel:
    if name not in _REGISTRY:
        raise KeyError(f"unknown model {name!r}; registered: {sorted(_REGISTRY)}")
    return _REGISTRY[name]()


register_model("unicycle", make_unicycle)
