"""Sampling-based estimation of per-node local Lipschitz constants of the
lumped nonlinearity, via direct ratio evaluation or indirect minimum-norm
identification from discrete propagation residuals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import models as mdl

Q_FLOOR = 1e-9


class EstimationError(RuntimeError):
    """No usable samples were retained for a node."""


class DecompositionError(RuntimeError):
    """Propagation residual is not in the range of the nonlinearity channel."""


@dataclass
class LipschitzEstimate:
    gamma: np.ndarray  # (N,)
    n_samples: int
    ratios: List[np.ndarray]  # retained per-node sample ratios


def sample_funnel(Q, n_samples, rng, n_w=None):
    """Draw (eta, w) pairs: eta uniformly on the surface of E_Q via a
    unit-sphere direction mapped through Q^(1/2); w uniform in the unit ball."""
    Q = np.asarray(Q, float)
    n = Q.shape[0]
    n_w = n_w if n_w is not None else n
    lam, V = np.linalg.eigh((Q + Q.T) / 2)
    lam = np.clip(lam, 0.0, None)
    sqrtQ = V @ np.diag(np.sqrt(lam)) @ V.T
    etas = np.empty((n_samples, n))
    ws = np.empty((n_samples, n_w))
    # per-sample draws so a longer run extends a shorter one with the
    # same seed (nested sample sets)
    for s in range(n_samples):
        d = rng.normal(size=n)
        etas[s] = sqrtQ @ (d / np.linalg.norm(d))
        dw = rng.normal(size=n_w)
        ws[s] = (dw / np.linalg.norm(dw)) * rng.uniform() ** (1.0 / n_w)
    return etas, ws


def ratio_from_q(model, q_bar, q_sample) -> Optional[float]:
    """Direct Lipschitz quotient ||phi(q) - phi(q_bar)|| / ||q - q_bar||."""
    dq = np.asarray(q_sample, float) - np.asarray(q_bar, float)
    nq = np.linalg.norm(dq)
    if nq < Q_FLOOR:
        return None
    dp = mdl.phi(model, q_sample) - mdl.phi(model, q_bar)
    return float(np.linalg.norm(dp) / nq)


def delta_direct(model, x_bar, u_bar, K, eta, w) -> Optional[float]:
    """Direct evaluation through the converted model at a funnel sample."""
    xi = K @ eta
    q_bar = mdl.nonlinearity_q(model, x_bar, u_bar, np.zeros(model.n_w))
    q_s = mdl.nonlinearity_q(model, x_bar + eta, u_bar + xi, w)
    return ratio_from_q(model, q_bar, q_s)


def min_norm_delta(E_k, r, v, range_tol: float = 1e-7) -> Optional[float]:
    """Smallest induced 2-norm of a matrix Delta with E_k Delta v = r.

    The minimizer of ||Delta||_2 subject to Delta v = p is p v' / ||v||^2,
    so the value is ||E_k^+ r|| / ||v||. Raises if r is not in range(E_k).
    """
    nv = np.linalg.norm(v)
    if nv < Q_FLOOR:
        return None
    p_vec = np.linalg.pinv(E_k) @ r
    if np.linalg.norm(E_k @ p_vec - r) > range_tol * max(1.0, np.linalg.norm(r)):
        raise DecompositionError(
            f"residual outside range of nonlinearity channel: ||r - E E+ r|| = "
            f"{np.linalg.norm(E_k @ p_vec - r):.3e}"
        )
    return float(np.linalg.norm(p_vec) / nv)


def delta_indirect(
    model,
    t_k,
    h,
    x_bar,
    u_bar,
    f_next,
    A,
    B,
    F,
    E_k,
    K,
    eta,
    w,
    substeps: int = 10,
    range_tol: float = 1e-7,
    step_fn=None,
) -> Optional[float]:
    """Minimum induced-2-norm Delta with E_k Delta v matching the residual
    between the sampled discrete propagation and the affine closed-loop
    prediction. `step_fn(model, t, x, u, w, h, substeps)` overrides the
    default one-interval integrator."""
    xi = K @ eta
    step = step_fn if step_fn is not None else mdl.integrate_step
    x_next = step(model, t_k, x_bar + eta, u_bar + xi, w, h, substeps)
    Acl = A + B @ K
    r = x_next - f_next - Acl @ eta - F @ w
    v = (model.C + model.D @ K) @ eta + model.G @ w
    return min_norm_delta(E_k, r, v, range_tol)


def estimate_gamma(per_node_ratios, kappa: float = 1.1) -> LipschitzEstimate:
    """Elementwise max of retained sample ratios, inflated by kappa."""
    gam = np.empty(len(per_node_ratios))
    kept = []
    for k, ratios in enumerate(per_node_ratios):
        ratios = np.asarray([r for r in ratios if r is not None], float)
        if ratios.size == 0:
            raise EstimationError(f"no retained samples at node {k}")
        gam[k] = kappa * ratios.max()
        kept.append(ratios)
    n_s = max(len(r) for r in kept)
    return LipschitzEstimate(gamma=gam, n_samples=n_s, ratios=kept)


def estimate_gamma_for_funnel(
    model,
    traj,
    lin,
    Q_hats,
    K_hats,
    E_k,
    n_samples: int = 100,
    kappa: float = 1.1,
    seed: int = 0,
    method: str = "indirect",
    substeps: int = 10,
) -> LipschitzEstimate:
    """Per-node gamma over samples of the current funnel and disturbance ball."""
    N = traj.N
    per_node = []
    for k in range(N):
        rng = np.random.default_rng(np.random.SeedSequence((seed, k)))
        etas, ws = sample_funnel(Q_hats[k], n_samples, rng, n_w=model.n_w)
        ratios = []
        for eta, w in zip(etas, ws):
            if method == "direct":
                d = delta_direct(model, traj.x[k], traj.u[k], K_hats[k], eta, w)
            elif method == "indirect":
                d = delta_indirect(
                    model, traj.t[k], traj.t[k + 1] - traj.t[k],
                    traj.x[k], traj.u[k], lin.f_next[k],
                    lin.A[k], lin.B[k], lin.F[k], E_k, K_hats[k],
                    eta, w, substeps=substeps,
                )
            elif method == "max":
                d1 = delta_direct(model, traj.x[k], traj.u[k], K_hats[k], eta, w)
                d2 = delta_indirect(
                    model, traj.t[k], traj.t[k + 1] - traj.t[k],
                    traj.x[k], traj.u[k], lin.f_next[k],
                    lin.A[k], lin.B[k], lin.F[k], E_k, K_hats[k],
                    eta, w, substeps=substeps,
                )
                d = None if d1 is None and d2 is None else max(
                    [v for v in (d1, d2) if v is not None]
                )
            else:
                raise ValueError(f"unknown method {method!r}")
            ratios.append(d)
        per_node.append(ratios)
    return estimate_gamma(per_node, kappa)
