"""Per-node support-value upper bounds via the dual S-procedure SDP, the
invariance recursion for beta, and funnel rescaling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg as sla

from . import conic
from .funnel_sdp import Funnel


class SupportDualError(RuntimeError):
    """Dual SDP failed; indicates inconsistent funnel data."""


@dataclass
class SupportDual:
    S0: np.ndarray
    S1: np.ndarray
    S2: Optional[np.ndarray]
    S3: np.ndarray
    lambdas: Optional[np.ndarray] = None
    beta_hat: Optional[float] = None


@dataclass
class BetaSequence:
    beta: np.ndarray  # (N+1,), beta[0] = 1
    beta_hat: np.ndarray  # (N,), bounds for k+1 = 1..N
    alpha: float


def _inv_psd(Q, eps=1e-12):
    Q = (np.asarray(Q, float) + np.asarray(Q, float).T) / 2
    lam, V = np.linalg.eigh(Q)
    lam = np.clip(lam, eps, None)
    return V @ np.diag(1.0 / lam) @ V.T


def assemble_S(A, B, F, E, C, D, G, K, Q_k, Q_k1, gamma) -> SupportDual:
    """Quadratic-form matrices over y = (eta, dp, w) for the support problem."""
    n_x = A.shape[0]
    n_w = F.shape[1]
    n_p = E.shape[1] if E is not None else 0
    Acl = A + B @ K
    Ccl = (C + D @ K) if C is not None else None
    Qi_k = _inv_psd(Q_k)
    Qi_k1 = _inv_psd(Q_k1)

    if n_p == 0:
        M = np.hstack([Acl, F])
        S0 = M.T @ Qi_k1 @ M
        S1 = sla.block_diag(Qi_k, np.zeros((n_w, n_w)))
        S3 = sla.block_diag(np.zeros((n_x, n_x)), np.eye(n_w))
        return SupportDual(S0=S0, S1=S1, S2=None, S3=S3)

    n_q = C.shape[0]
    M = np.hstack([Acl, E, F])
    S0 = M.T @ Qi_k1 @ M
    S1 = sla.block_diag(Qi_k, np.zeros((n_p, n_p)), np.zeros((n_w, n_w)))
    S3 = sla.block_diag(np.zeros((n_x, n_x)), np.zeros((n_p, n_p)), np.eye(n_w))
    Nq = np.block(
        [
            [Ccl, np.zeros((n_q, n_p)), G],
            [np.zeros((n_p, n_x)), np.eye(n_p), np.zeros((n_p, n_w))],
        ]
    )
    W = sla.block_diag(-(gamma**2) * np.eye(n_q), np.eye(n_p))
    S2 = Nq.T @ W @ Nq
    return SupportDual(S0=S0, S1=S1, S2=S2, S3=S3)


def solve_support_dual(sd: SupportDual) -> Tuple[float, np.ndarray]:
    """minimize l1 + l3 s.t. l >= 0, sum l_i S_i - S_0 >= 0."""
    n = sd.S0.shape[0]
    have_s2 = sd.S2 is not None
    nv = 3 if have_s2 else 2
    p = conic.ConeProgram(nv)
    # l1 is var 0, l2 var 1 (if present), l3 last
    i3 = nv - 1
    p.add_objective([0, i3], [1.0, 1.0])
    p.add_nonneg(range(nv), range(nv), [-1.0] * nv, np.zeros(nv))
    terms = [(0, sd.S1), (i3, sd.S3)]
    if have_s2:
        terms.append((1, sd.S2))
    p.add_psd_expr(-sd.S0, terms)
    res = conic.solve(p)
    if res.status != "optimal":
        raise SupportDualError(f"support dual status {res.status!r}")
    lam = res.x
    if have_s2:
        lambdas = np.array([lam[0], lam[1], lam[2]])
    else:
        lambdas = np.array([lam[0], 0.0, lam[1]])
    return float(res.objective), lambdas


def beta_recursion(beta_hat, alpha: float) -> BetaSequence:
    """beta_0 = 1, beta_1 = bhat_1, beta_{k+1} = max(alpha beta_k, bhat_{k+1})."""
    beta_hat = np.asarray(beta_hat, float)
    N = len(beta_hat)
    beta = np.empty(N + 1)
    beta[0] = 1.0
    if N >= 1:
        beta[1] = beta_hat[0]
    for k in range(1, N):
        beta[k + 1] = max(alpha * beta[k], beta_hat[k])
    return BetaSequence(beta=beta, beta_hat=beta_hat, alpha=alpha)


def apply_support_scaling(funnel: Funnel, betas: BetaSequence) -> Funnel:
    """Dilate the certified sets: Q_k <- beta_k Q_k; gains are unchanged.

    Y is refreshed to K (beta Q) so trust-region references stay consistent.
    """
    if np.any(betas.beta < 0):
        raise ValueError("negative beta")
    Q = funnel.Q * betas.beta[:, None, None]
    Y = np.array([funnel.K[k] @ Q[k] for k in range(funnel.N)])
    return Funnel(Q=Q, Y=Y, K=funnel.K.copy(), beta=betas.beta.copy())


def compute_beta(
    lin, E_k, C, D, G, funnel: Funnel, gamma, alpha: float
) -> BetaSequence:
    """Support bounds for every node followed by the invariance recursion."""
    N = funnel.N
    bhat = np.empty(N)
    for k in range(N):
        sd = assemble_S(
            lin.A[k], lin.B[k], lin.F[k], E_k, C, D, G,
            funnel.K[k], funnel.Q[k], funnel.Q[k + 1], float(gamma[k]),
        )
        bhat[k], _ = solve_support_dual(sd)
    return beta_recursion(bhat, alpha)
