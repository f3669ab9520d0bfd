"""Trajectory-update SOCP: linearized dynamics with virtual control, trust
region, funnel-tightened polytopic constraints, and fixed boundary states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import conic


class LinearizationError(RuntimeError):
    """Non-finite gradient while linearizing a constraint."""


class TighteningError(ValueError):
    """Shape matrix is not positive semidefinite."""


class TrajSubproblemError(RuntimeError):
    """The trajectory SOCP did not return an optimal solution."""


@dataclass
class Trajectory:
    t: np.ndarray  # (N+1,)
    x: np.ndarray  # (N+1, n_x)
    u: np.ndarray  # (N, n_u)

    @property
    def N(self) -> int:
        return len(self.u)


@dataclass
class ScalarConstraint:
    """h(v) <= 0 with gradient; v is the full state or input vector."""

    h: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = ""


@dataclass
class ConstraintSet:
    state: List[ScalarConstraint] = field(default_factory=list)
    input: List[ScalarConstraint] = field(default_factory=list)
    x_i: Optional[np.ndarray] = None
    x_f: Optional[np.ndarray] = None
    Q_i: Optional[np.ndarray] = None
    Q_f: Optional[np.ndarray] = None


@dataclass
class TrajWeights:
    w_v: float = 1e3
    w_tr: float = 0.5

    def __post_init__(self):
        if self.w_v <= 0 or self.w_tr <= 0:
            raise ValueError("weights must be positive")


def ellipsoid_obstacle(center, diameters, name="obstacle") -> ScalarConstraint:
    """Keep-out constraint h(x) = 1 - ||P (r - c)||_2 <= 0 on the position
    coordinates, P = diag(2/d1, 2/d2). Norm floored at 1e-6 for the gradient."""
    c = np.asarray(center, float)
    P = np.diag(2.0 / np.asarray(diameters, float))
    m = len(c)

    def h(x):
        return 1.0 - np.linalg.norm(P @ (x[:m] - c))

    def grad(x):
        d = P @ (x[:m] - c)
        n = max(np.linalg.norm(d), 1e-6)
        g = np.zeros(len(x))
        g[:m] = -(P.T @ d) / n
        return g

    return ScalarConstraint(h, grad, name)


def box_constraints(lo, hi, dim, names=None) -> List[ScalarConstraint]:
    """Affine half-spaces lo_i <= v_i <= hi_i."""
    out = []
    for i in range(dim):
        for sgn, bound in ((1.0, hi[i]), (-1.0, -lo[i])):
            a = np.zeros(dim)
            a[i] = sgn
            out.append(
                ScalarConstraint(
                    h=lambda v, a=a, b=bound: float(a @ v - b),
                    grad=lambda v, a=a: a,
                    name=f"{(names or ['v'] * dim)[i]}{'+' if sgn > 0 else '-'}",
                )
            )
    return out


def linearize_constraint(c: ScalarConstraint, v_hat) -> Tuple[np.ndarray, float]:
    """First-order half-space a' v <= b at the reference point."""
    a = np.asarray(c.grad(v_hat), float)
    b = float(a @ v_hat - c.h(v_hat))
    if not (np.all(np.isfinite(a)) and np.isfinite(b)):
        raise LinearizationError(f"non-finite linearization of {c.name!r}")
    return a, b


def linearize_constraints(cs: ConstraintSet, ref: Trajectory):
    """Per-node half-spaces for the state and input constraints."""
    state = [[linearize_constraint(c, ref.x[k]) for c in cs.state] for k in range(ref.N + 1)]
    inp = [[linearize_constraint(c, ref.u[k]) for c in cs.input] for k in range(ref.N)]
    return state, inp


def tighten(a, b, Q_hat, K_hat=None) -> float:
    """Shrink b by the funnel support value along a.

    State form uses Q_hat, input form uses K_hat Q_hat K_hat'.
    """
    a = np.asarray(a, float)
    S = np.asarray(Q_hat, float)
    if K_hat is not None:
        S = K_hat @ S @ K_hat.T
    lam_min = float(np.linalg.eigvalsh((S + S.T) / 2).min()) if S.size else 0.0
    if lam_min < -1e-9:
        raise TighteningError(f"shape matrix has negative eigenvalue {lam_min}")
    val = float(a @ S @ a)
    return float(b) - np.sqrt(max(val, 0.0))


def _quad_epigraph(prog, t_var, z_idx, z_coef_rows):
    """t >= ||z||^2 via ||(2 z, t - 1)|| <= t + 1.

    z_coef_rows: list of (cols, vals, const) rows describing z = A x + c.
    """
    dim = len(z_coef_rows) + 2
    rows, cols, vals = [], [], []
    b = np.zeros(dim)
    # slot 0: t + 1  => b0 - A0 x = t + 1 -> A row: -t, b = 1
    rows.append(0), cols.append(t_var), vals.append(-1.0)
    b[0] = 1.0
    for i, (cc, vv, const) in enumerate(z_coef_rows):
        for c_, v_ in zip(cc, vv):
            rows.append(1 + i), cols.append(c_), vals.append(-2.0 * v_)
        b[1 + i] = 2.0 * const
    rows.append(dim - 1), cols.append(t_var), vals.append(-1.0)
    b[dim - 1] = -1.0
    prog.add_soc(rows, cols, vals, b)


@dataclass
class TrajSolution:
    trajectory: Trajectory
    vc_norms: np.ndarray  # per-node ||v_k||_1
    cost_traj: float
    cost_vc: float
    cost_tr: float
    objective: float


def build_and_solve_traj_socp(
    ref: Trajectory,
    lin,
    funnel_ref,  # (Q_hats (N+1, n_x, n_x), K_hats (N, n_u, n_x)) or None
    cs: ConstraintSet,
    weights: TrajWeights,
    input_cost_weight: Optional[np.ndarray] = None,
    state_cost_weight: Optional[np.ndarray] = None,
) -> TrajSolution:
    """Solve the convex trajectory subproblem around the reference."""
    N = ref.N
    n_x = ref.x.shape[1]
    n_u = ref.u.shape[1]
    Wu = input_cost_weight if input_cost_weight is not None else np.eye(n_u)
    Wx = state_cost_weight

    nv = 0

    def alloc(k):
        nonlocal nv
        idx = np.arange(nv, nv + k)
        nv += k
        return idx

    xs = [alloc(n_x) for _ in range(N + 1)]
    us = [alloc(n_u) for _ in range(N)]
    vs = [alloc(n_x) for _ in range(N)]
    omegas = [alloc(n_x) for _ in range(N)]  # |v| bounds for the L1 cost
    tJ = alloc(1)[0]
    tTR = alloc(1)[0]

    p = conic.ConeProgram(nv)

    # dynamics x_{k+1} = A x_k + B u_k + z_k + v_k
    for k in range(N):
        rows, cols, vals = [], [], []
        for i in range(n_x):
            rows.append(i), cols.append(xs[k + 1][i]), vals.append(1.0)
            for j in range(n_x):
                if lin.A[k][i, j] != 0.0:
                    rows.append(i), cols.append(xs[k][j]), vals.append(-lin.A[k][i, j])
            for j in range(n_u):
                if lin.B[k][i, j] != 0.0:
                    rows.append(i), cols.append(us[k][j]), vals.append(-lin.B[k][i, j])
            rows.append(i), cols.append(vs[k][i]), vals.append(-1.0)
        p.add_zero(rows, cols, vals, lin.z[k])

    # boundary states
    p.add_zero(range(n_x), xs[0], np.ones(n_x), cs.x_i)
    p.add_zero(range(n_x), xs[N], np.ones(n_x), cs.x_f)

    # tightened polytopic constraints
    lin_state, lin_input = linearize_constraints(cs, ref)
    for k in range(N + 1):
        for a, b in lin_state[k]:
            Qh = funnel_ref[0][k] if funnel_ref is not None else None
            bp = tighten(a, b, Qh) if Qh is not None else b
            nz = np.nonzero(a)[0]
            p.add_nonneg([0] * len(nz), xs[k][nz], a[nz], [bp])
    for k in range(N):
        for a, b in lin_input[k]:
            if funnel_ref is not None:
                bp = tighten(a, b, funnel_ref[0][k], funnel_ref[1][k])
            else:
                bp = b
            nz = np.nonzero(a)[0]
            p.add_nonneg([0] * len(nz), us[k][nz], a[nz], [bp])

    # L1 virtual control: -omega <= v <= omega, cost w_v * sum(omega)
    for k in range(N):
        rows = list(range(n_x)) * 2 + list(range(n_x, 2 * n_x)) * 1
        r, c_, v_ = [], [], []
        for i in range(n_x):
            r += [i, i]
            c_ += [int(vs[k][i]), int(omegas[k][i])]
            v_ += [1.0, -1.0]
            r += [n_x + i, n_x + i]
            c_ += [int(vs[k][i]), int(omegas[k][i])]
            v_ += [-1.0, -1.0]
        p.add_nonneg(r, c_, v_, np.zeros(2 * n_x))
        p.add_objective(omegas[k], np.full(n_x, weights.w_v))

    # quadratic trajectory cost epigraph
    z_rows = []
    Lu = np.linalg.cholesky(Wu + 1e-15 * np.eye(n_u)).T if Wu is not None else None
    for k in range(N):
        if Lu is not None:
            for i in range(n_u):
                nz = np.nonzero(Lu[i])[0]
                z_rows.append((us[k][nz].tolist(), Lu[i][nz].tolist(), 0.0))
    if Wx is not None:
        Lx = np.linalg.cholesky(Wx + 1e-15 * np.eye(n_x)).T
        for k in range(N + 1):
            for i in range(n_x):
                nz = np.nonzero(Lx[i])[0]
                z_rows.append((xs[k][nz].tolist(), Lx[i][nz].tolist(), 0.0))
    _quad_epigraph(p, tJ, None, z_rows)
    p.add_objective([tJ], [1.0])

    # trust-region penalty epigraph over all deviations
    z_rows = []
    for k in range(N + 1):
        for i in range(n_x):
            z_rows.append(([int(xs[k][i])], [1.0], -float(ref.x[k][i])))
    for k in range(N):
        for i in range(n_u):
            z_rows.append(([int(us[k][i])], [1.0], -float(ref.u[k][i])))
    _quad_epigraph(p, tTR, None, z_rows)
    p.add_objective([tTR], [weights.w_tr])

    res = conic.solve(p)
    if res.status != "optimal":
        raise TrajSubproblemError(
            f"trajectory SOCP returned status {res.status!r} "
            f"(N={N}, iterations={res.iterations})"
        )

    xv = np.array([res.x[idx] for idx in xs])
    uv = np.array([res.x[idx] for idx in us])
    vv = np.array([res.x[idx] for idx in vs])
    traj = Trajectory(t=ref.t.copy(), x=xv, u=uv)
    vc = np.abs(vv).sum(axis=1)

    cost_traj = float(sum(uv[k] @ Wu @ uv[k] for k in range(N)))
    if Wx is not None:
        cost_traj += float(sum(xv[k] @ Wx @ xv[k] for k in range(N + 1)))
    cost_vc = float(weights.w_v * vc.sum())
    cost_tr = float(
        weights.w_tr
        * (np.sum((xv - ref.x) ** 2) + np.sum((uv - ref.u) ** 2))
    )
    return TrajSolution(
        trajectory=traj,
        vc_norms=vc,
        cost_traj=cost_traj,
        cost_vc=cost_vc,
        cost_tr=cost_tr,
        objective=float(res.objective),
    )
