"""Monte Carlo invariance and feasibility verification: closed-loop
nonlinear rollouts from the initial ellipsoid surface under held bounded
disturbances, checked against funnel containment and the original
nonlinear constraints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import models as mdl
from .funnel_sdp import Funnel
from .support import _inv_psd
from .trajopt import ConstraintSet, Trajectory

CONTAIN_SLACK = 1e-9


class RolloutError(RuntimeError):
    pass


@dataclass
class VerificationReport:
    n_samples: int
    containment: np.ndarray  # (n_samples, N+1) values eta' (beta Q)^-1 eta
    obstacle_margins: np.ndarray  # (n_samples, N+1, m_x); feasible when >= 0
    input_margins: np.ndarray  # (n_samples, N, m_u)
    inputs: np.ndarray  # (n_samples, N, n_u) applied closed-loop inputs
    states: np.ndarray  # (n_samples, N+1, n_x)
    passed: bool
    worst_node: int
    worst_containment: float

    @property
    def min_obstacle_margin(self) -> float:
        return float(self.obstacle_margins.min()) if self.obstacle_margins.size else np.inf

    @property
    def min_input_margin(self) -> float:
        return float(self.input_margins.min()) if self.input_margins.size else np.inf


def rollout(model, traj: Trajectory, K, eta0, w_schedule, substeps: int = 10):
    """Closed-loop continuous rollout with per-interval held input and
    disturbance; returns the state path and applied inputs."""
    N = traj.N
    xs = np.empty((N + 1, model.n_x))
    us = np.empty((N, model.n_u))
    xs[0] = traj.x[0] + eta0
    for k in range(N):
        eta = xs[k] - traj.x[k]
        us[k] = traj.u[k] + K[k] @ eta
        xs[k + 1] = mdl.integrate_step(
            model, traj.t[k], xs[k], us[k], w_schedule[k],
            traj.t[k + 1] - traj.t[k], substeps,
        )
        if not np.all(np.isfinite(xs[k + 1])):
            raise RolloutError(f"non-finite state at node {k + 1}")
    return xs, us


def check_feasibility(path, inputs, cs: ConstraintSet):
    """Margins -h of the original nonlinear constraints at every node."""
    obs = np.array([[-c.h(x) for c in cs.state] for x in path]) if cs.state else np.zeros((len(path), 0))
    inp = np.array([[-c.h(u) for c in cs.input] for u in inputs]) if cs.input else np.zeros((len(inputs), 0))
    return obs, inp


def worst_case_disturbance(model, traj, funnel, k, eta):
    """Align w with the direction that maximally grows the next-step
    containment value; heuristic harsher-than-random mode."""
    Qn_inv = _inv_psd(funnel.Q[k + 1] * (funnel.beta[k + 1] if funnel.beta is not None else 1.0))
    _, _, F = mdl.jacobians(model, traj.t[k], traj.x[k], traj.u[k], np.zeros(model.n_w))
    g = F.T @ Qn_inv @ eta
    n = np.linalg.norm(g)
    if n < 1e-12:
        w = np.zeros(model.n_w)
        w[0] = 1.0
        return w
    return g / n


def run_verification(
    model,
    traj: Trajectory,
    funnel: Funnel,
    cs: ConstraintSet,
    n_samples: int = 100,
    seed: int = 0,
    substeps: int = 10,
    mode: str = "sphere",
) -> VerificationReport:
    """Propagate samples from the surface of E_{Q_0} under unit-norm held
    disturbances and check containment in E_{beta_k Q_k} plus feasibility."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    N = traj.N
    beta = funnel.beta if funnel.beta is not None else np.ones(N + 1)
    Q_scaled = funnel.Q * 1.0  # funnel.Q already carries beta when scaled upstream
    inv_scaled = [_inv_psd(Q_scaled[k]) for k in range(N + 1)]

    # initial samples on the surface of E_{Q_0} (beta_0 = 1)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A)))
    lam, V = np.linalg.eigh((Q_scaled[0] + Q_scaled[0].T) / 2)
    sqrtQ0 = V @ np.diag(np.sqrt(np.clip(lam, 0, None))) @ V.T
    d = rng.normal(size=(n_samples, model.n_x))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    etas0 = d @ sqrtQ0.T

    containment = np.empty((n_samples, N + 1))
    all_states = np.empty((n_samples, N + 1, model.n_x))
    all_inputs = np.empty((n_samples, N, model.n_u))
    m_x, m_u = len(cs.state), len(cs.input)
    obs_m = np.empty((n_samples, N + 1, m_x))
    inp_m = np.empty((n_samples, N, m_u))

    for s in range(n_samples):
        w_rng = np.random.default_rng(np.random.SeedSequence((seed, 1 + s)))
        if mode == "worst":
            # built on the fly inside the loop below
            ws = np.zeros((N, model.n_w))
        else:
            ws = w_rng.normal(size=(N, model.n_w))
            ws /= np.linalg.norm(ws, axis=1, keepdims=True)

        xs = np.empty((N + 1, model.n_x))
        us = np.empty((N, model.n_u))
        xs[0] = traj.x[0] + etas0[s]
        for k in range(N):
            eta = xs[k] - traj.x[k]
            if mode == "worst":
                ws[k] = worst_case_disturbance(model, traj, funnel, k, eta)
            us[k] = traj.u[k] + funnel.K[k] @ eta
            xs[k + 1] = mdl.integrate_step(
                model, traj.t[k], xs[k], us[k], ws[k],
                traj.t[k + 1] - traj.t[k], substeps,
            )
        all_states[s] = xs
        all_inputs[s] = us
        for k in range(N + 1):
            eta = xs[k] - traj.x[k]
            containment[s, k] = float(eta @ inv_scaled[k] @ eta)
        o, i_ = check_feasibility(xs, us, cs)
        obs_m[s], inp_m[s] = o, i_

    ok = (
        containment.max() <= 1.0 + CONTAIN_SLACK
        and (obs_m.size == 0 or obs_m.min() >= -CONTAIN_SLACK)
        and (inp_m.size == 0 or inp_m.min() >= -CONTAIN_SLACK)
    )
    worst_flat = int(np.argmax(containment.max(axis=0)))
    return VerificationReport(
        n_samples=n_samples,
        containment=containment,
        obstacle_margins=obs_m,
        input_margins=inp_m,
        inputs=all_inputs,
        states=all_states,
        passed=bool(ok),
        worst_node=worst_flat,
        worst_containment=float(containment.max()),
    )
