"""Funnel-update SDP: per-node invariance LMI, ellipsoid-size minimization,
input-ellipsoid Schur blocks, boundary set constraints, and a Frobenius
trust region on (Q, Y)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import conic

log = logging.getLogger("funnelsyn")

GAMMA_FLOOR = 1e-6
EPS_PSD = 1e-9


class FunnelUpdateError(RuntimeError):
    """Funnel SDP infeasible for every multiplier candidate."""


@dataclass
class Funnel:
    Q: np.ndarray  # (N+1, n_x, n_x)
    Y: np.ndarray  # (N, n_u, n_x)
    K: np.ndarray  # (N, n_u, n_x), K_k = Y_k Q_k^-1
    beta: Optional[np.ndarray] = None  # support values after scaling

    @property
    def N(self) -> int:
        return len(self.Y)


@dataclass
class LyapunovParams:
    alpha: float = 0.99
    lambda_w: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.lambda_w <= 0.0:
            raise ValueError("lambda_w must be positive")


def _y_basis(n_u, n_x):
    """Unit matrices for Y vectorized row-major."""
    out = []
    for r in range(n_u):
        for c in range(n_x):
            M = np.zeros((n_u, n_x))
            M[r, c] = 1.0
            out.append(M)
    return out


def build_node_lmi(
    A, B, F, E, C, D, G,
    q_vars, q1_vars, y_vars, nup_var,
    alpha: float, lambda_w: float, gamma: float,
    q_basis, y_basis,
) -> conic.BlockExpr:
    """Invariance LMI for one node, linear in (Q_k, Q_{k+1}, Y_k, nu^p_k).

    Row blocks: [state, nonlinearity, disturbance, next state, q-channel].
    The nonlinearity blocks are structurally removed when n_p = 0.
    """
    n_x, n_u = B.shape
    n_w = F.shape[1]
    n_p = E.shape[1] if E is not None else 0
    n_q = C.shape[0] if C is not None else 0

    if n_p > 0 and gamma <= GAMMA_FLOOR:
        log.warning("gamma %.3e clamped to floor %.1e", gamma, GAMMA_FLOOR)
        gamma = GAMMA_FLOOR

    if n_p == 0:
        expr = conic.BlockExpr([n_x, n_w, n_x])
        expr.set_block(0, 0, terms=conic.mat_terms(q_vars, q_basis, left=(alpha - lambda_w) * np.eye(n_x)))
        expr.set_block(1, 1, const=lambda_w * np.eye(n_w))
        expr.set_block(
            2, 0,
            terms=conic.mat_terms(q_vars, q_basis, left=A)
            + conic.mat_terms(y_vars, y_basis, left=B),
        )
        expr.set_block(2, 1, const=F)
        expr.set_block(2, 2, terms=conic.mat_terms(q1_vars, q_basis))
        return expr

    expr = conic.BlockExpr([n_x, n_p, n_w, n_x, n_q])
    expr.set_block(0, 0, terms=conic.mat_terms(q_vars, q_basis, left=(alpha - lambda_w) * np.eye(n_x)))
    expr.set_block(1, 1, terms=[(int(nup_var), np.eye(n_p))])
    expr.set_block(2, 2, const=lambda_w * np.eye(n_w))
    expr.set_block(
        3, 0,
        terms=conic.mat_terms(q_vars, q_basis, left=A)
        + conic.mat_terms(y_vars, y_basis, left=B),
    )
    expr.set_block(3, 1, terms=[(int(nup_var), E)])
    expr.set_block(3, 2, const=F)
    expr.set_block(3, 3, terms=conic.mat_terms(q1_vars, q_basis))
    expr.set_block(
        4, 0,
        terms=conic.mat_terms(q_vars, q_basis, left=C)
        + conic.mat_terms(y_vars, y_basis, left=D),
    )
    expr.set_block(4, 2, const=G)
    expr.set_block(4, 4, terms=[(int(nup_var), np.eye(n_q) / gamma**2)])
    return expr


@dataclass
class FunnelSolution:
    funnel: Funnel
    nu: np.ndarray  # (N+1,)
    mu: np.ndarray  # (N,)
    nu_p: np.ndarray  # (N,)
    objective: float
    status: str


def build_and_solve_funnel_sdp(
    lin,
    E_k: np.ndarray,
    C: np.ndarray,
    D: np.ndarray,
    G: np.ndarray,
    gamma: np.ndarray,
    params: LyapunovParams,
    Q_ref: np.ndarray,
    Y_ref: np.ndarray,
    Q_i: Optional[np.ndarray],
    Q_f: Optional[np.ndarray],
    w_trf: float = 0.05,
    eps_psd: float = EPS_PSD,
) -> FunnelSolution:
    """Assemble and solve the funnel SDP for a fixed (alpha, lambda_w)."""
    N = lin.N
    n_x = lin.A.shape[1]
    n_u = lin.B.shape[2]
    n_p = E_k.shape[1] if E_k is not None else 0
    m = conic.svec_dim(n_x)
    q_basis = conic.svec_basis(n_x)
    y_basis = _y_basis(n_u, n_x)

    nv = 0

    def alloc(k):
        nonlocal nv
        idx = np.arange(nv, nv + k)
        nv += k
        return idx

    qv = [alloc(m) for _ in range(N + 1)]
    yv = [alloc(n_u * n_x) for _ in range(N)]
    nu = alloc(N + 1)
    mu = alloc(N)
    nup = alloc(N) if n_p > 0 else None
    tQ = alloc(N)
    tY = alloc(N)

    p = conic.ConeProgram(nv)

    eyeT = [(i, q_basis[i]) for i in range(m)]

    for k in range(N + 1):
        # Q_k >= eps I
        p.add_psd_expr(-eps_psd * np.eye(n_x), [(int(qv[k][i]), q_basis[i]) for i in range(m)])
        # nu_k I - Q_k >= 0
        terms = [(int(qv[k][i]), -q_basis[i]) for i in range(m)]
        terms.append((int(nu[k]), np.eye(n_x)))
        p.add_psd_expr(np.zeros((n_x, n_x)), terms)

    for k in range(N):
        # [[mu I, Y],[Y', Q]] >= 0
        expr = conic.BlockExpr([n_u, n_x])
        expr.set_block(0, 0, terms=[(int(mu[k]), np.eye(n_u))])
        expr.set_block(1, 0, terms=[(int(yv[k][a]), y_basis[a].T) for a in range(n_u * n_x)])
        expr.set_block(1, 1, terms=conic.mat_terms(qv[k], q_basis))
        p.add_psd_expr(expr.const, expr.items())

        # invariance LMI
        lmi = build_node_lmi(
            lin.A[k], lin.B[k], lin.F[k], E_k, C, D, G,
            qv[k], qv[k + 1], yv[k], nup[k] if nup is not None else None,
            params.alpha, params.lambda_w, float(gamma[k]),
            q_basis, y_basis,
        )
        p.add_psd_expr(lmi.const, lmi.items())

        # Frobenius trust region epigraphs: tQ >= ||svec(Q)-svec(Qref)||_2
        dim = m + 1
        rows = [0] + list(range(1, dim))
        cols = [int(tQ[k])] + [int(qv[k][i]) for i in range(m)]
        vals = [-1.0] + [1.0] * m
        b = np.concatenate([[0.0], conic.svec_pack(Q_ref[k])])
        p.add_soc(rows, cols, vals, b)

        dim = n_u * n_x + 1
        rows = [0] + list(range(1, dim))
        cols = [int(tY[k])] + [int(yv[k][a]) for a in range(n_u * n_x)]
        vals = [-1.0] + [1.0] * (n_u * n_x)
        b = np.concatenate([[0.0], Y_ref[k].ravel()])
        p.add_soc(rows, cols, vals, b)

    if Q_i is not None:
        # Q_0 >= Q_i
        p.add_psd_expr(-np.asarray(Q_i, float), [(int(qv[0][i]), q_basis[i]) for i in range(m)])
    if Q_f is not None:
        # Q_f >= Q_N
        p.add_psd_expr(np.asarray(Q_f, float), [(int(qv[N][i]), -q_basis[i]) for i in range(m)])

    p.add_objective(nu, np.ones(N + 1))
    p.add_objective(mu, np.ones(N))
    p.add_objective(tQ, np.full(N, w_trf))
    p.add_objective(tY, np.full(N, w_trf))

    res = conic.solve(p)
    if res.status != "optimal":
        return FunnelSolution(
            funnel=None, nu=None, mu=None, nu_p=None, objective=np.inf, status=res.status
        )

    Q = np.array([conic.svec_unpack(res.x[idx]) for idx in qv])
    Y = np.array([res.x[idx].reshape(n_u, n_x) for idx in yv])
    K = np.array([np.linalg.solve(Q[k].T, Y[k].T).T for k in range(N)])
    return FunnelSolution(
        funnel=Funnel(Q=Q, Y=Y, K=K),
        nu=res.x[nu],
        mu=res.x[mu],
        nu_p=res.x[nup] if nup is not None else np.zeros(N),
        objective=float(res.objective),
        status="optimal",
    )


def lambda_w_grid_search(
    candidates: Sequence[float],
    solve_one,
) -> Tuple[float, FunnelSolution]:
    """Solve the SDP per lambda_w candidate; return the feasible argmin.

    solve_one: callable lambda_w -> FunnelSolution.
    """
    if not len(candidates):
        raise FunnelUpdateError("empty lambda_w candidate list")
    best = None
    for lam in candidates:
        sol = solve_one(float(lam))
        if sol.status == "optimal" and (best is None or sol.objective < best[1].objective):
            best = (float(lam), sol)
    if best is None:
        raise FunnelUpdateError(
            f"funnel SDP infeasible for all lambda_w candidates {list(candidates)}; "
            "consider reducing alpha or revisiting the grid (gamma may be too large)"
        )
    return best
