"""Four-step joint synthesis driver: initial guess, trajectory update,
Lipschitz estimation, funnel update, support-value scaling, convergence."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import lipschitz as lip
from . import models as mdl
from . import support as sup
from . import trajopt
from .funnel_sdp import (
    Funnel,
    FunnelSolution,
    LyapunovParams,
    build_and_solve_funnel_sdp,
    lambda_w_grid_search,
)
from .trajopt import ConstraintSet, Trajectory, TrajWeights

log = logging.getLogger("funnelsyn")


class InitializationError(RuntimeError):
    pass


@dataclass
class ObstacleSpec:
    center: Tuple[float, float]
    diameters: Tuple[float, float]


@dataclass
class RunConfig:
    model: str = "unicycle"
    N: int = 30
    t_f: float = 3.0
    x_i: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_f: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 0.0]))
    Q_i: np.ndarray = field(
        default_factory=lambda: np.diag([0.4**2, 0.4**2, (20 * np.pi / 180) ** 2])
    )
    Q_f: np.ndarray = field(
        default_factory=lambda: np.diag([0.5**2, 0.5**2, (20 * np.pi / 180) ** 2])
    )
    obstacles: List[ObstacleSpec] = field(
        default_factory=lambda: [
            ObstacleSpec((1.0, 2.0), (1.5, 3.0)),
            ObstacleSpec((4.0, 3.0), (1.5, 3.0)),
        ]
    )
    input_lo: np.ndarray = field(default_factory=lambda: np.array([-4.0, -2.5]))
    input_hi: np.ndarray = field(default_factory=lambda: np.array([4.0, 2.5]))
    w_v: float = 1e3
    w_tr: float = 0.5
    w_trf: float = 0.05
    alpha: float = 0.99
    lambda_w_grid: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)  # scaled by alpha
    n_lip_samples: int = 100
    kappa_gamma: float = 1.1
    gamma_method: str = "indirect"
    seed: int = 0
    tol_traj: float = 1e-3
    tol_funnel: float = 1e-4
    n_max: int = 30
    initial_diameters: np.ndarray = field(
        default_factory=lambda: np.array([0.8, 0.8, 40 * np.pi / 180])
    )
    mode: str = "joint"  # joint | scp-only
    substeps: int = 10

    def validate(self) -> None:
        if self.tol_traj <= 0:
            raise ValueError("tol_traj must be positive")
        if self.tol_funnel <= 0:
            raise ValueError("tol_funnel must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.mode not in ("joint", "scp-only"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.n_lip_samples < 1:
            raise ValueError("n_lip_samples must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    delta_traj: float
    delta_funnel: float
    traj_cost: float
    funnel_objective: float
    vc_norm: float
    wall_time: float


@dataclass
class RunResult:
    trajectory: Trajectory
    funnel: Optional[Funnel]
    betas: Optional[sup.BetaSequence]
    records: List[IterationRecord]
    converged: bool
    config: RunConfig
    # by-products of the final iteration, kept for certification checks
    funnel_unscaled: Optional[Funnel] = None
    gamma: Optional[np.ndarray] = None
    linearization: Optional[mdl.DiscreteLinearization] = None
    lambda_w: Optional[float] = None


def make_constraint_set(config: RunConfig, model) -> ConstraintSet:
    cs = ConstraintSet(
        x_i=np.asarray(config.x_i, float),
        x_f=np.asarray(config.x_f, float),
        Q_i=np.asarray(config.Q_i, float),
        Q_f=np.asarray(config.Q_f, float),
    )
    for i, ob in enumerate(config.obstacles):
        cs.state.append(
            trajopt.ellipsoid_obstacle(ob.center, ob.diameters, name=f"obstacle{i}")
        )
    cs.input = trajopt.box_constraints(
        config.input_lo, config.input_hi, model.n_u, names=[f"u{i}" for i in range(model.n_u)]
    )
    return cs


def lqr_gains(A, B, Wx, Wu, P_terminal=None):
    """Finite-horizon backward Riccati recursion; gains for u = K eta."""
    N = len(A)
    n_x = A[0].shape[0]
    P = P_terminal if P_terminal is not None else np.asarray(Wx, float).copy()
    Ks = np.empty((N, B[0].shape[1], n_x))
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        S = Wu + Bk.T @ P @ Bk
        try:
            Kk = -np.linalg.solve(S, Bk.T @ P @ Ak)
        except np.linalg.LinAlgError as e:
            raise InitializationError(f"Riccati step {k} singular") from e
        P = Wx + Ak.T @ P @ Ak + Ak.T @ P @ Bk @ Kk
        P = (P + P.T) / 2
        if not np.all(np.isfinite(P)):
            raise InitializationError(f"Riccati divergence at step {k}")
        Ks[k] = Kk
    return Ks


def initial_guess(config: RunConfig, model) -> Tuple[Trajectory, Funnel]:
    """Straight-line states, zero inputs, LQR gains, diagonal ellipsoids."""
    N = config.N
    ts = np.linspace(0.0, config.t_f, N + 1)
    x_i = np.asarray(config.x_i, float)
    x_f = np.asarray(config.x_f, float)
    xs = np.array([x_i + (x_f - x_i) * k / N for k in range(N + 1)])
    us = np.zeros((N, model.n_u))
    traj = Trajectory(t=ts, x=xs, u=us)

    lin = mdl.discretize_trajectory(model, ts, xs, us, config.substeps)
    Ks = lqr_gains(lin.A, lin.B, np.eye(model.n_x), np.eye(model.n_u))

    d = np.asarray(config.initial_diameters, float)
    Q0 = np.diag((d / 2.0) ** 2)
    Q = np.repeat(Q0[None, :, :], N + 1, axis=0)
    Y = np.array([Ks[k] @ Q[k] for k in range(N)])
    return traj, Funnel(Q=Q, Y=Y, K=Ks, beta=np.ones(N + 1))


def convergence_metrics(traj, ref_traj, funnel=None, ref_funnel=None):
    """Squared deviation sums for the trajectory and (Q, Y) iterates."""
    d_t = float(np.sum((traj.x - ref_traj.x) ** 2) + np.sum((traj.u - ref_traj.u) ** 2))
    if funnel is None or ref_funnel is None:
        return d_t, 0.0
    d_f = float(
        np.sum((funnel.Q - ref_funnel.Q) ** 2)
        + np.sum((funnel.Y - ref_funnel.Y) ** 2)
    )
    return d_t, d_f


def run(config: RunConfig) -> RunResult:
    """Execute the joint synthesis loop (Algorithm-style step order)."""
    config.validate()
    model = mdl.get_model(config.model)
    cs = make_constraint_set(config, model)
    weights = TrajWeights(w_v=config.w_v, w_tr=config.w_tr)

    ref_traj, ref_funnel = initial_guess(config, model)
    joint = config.mode == "joint"
    records: List[IterationRecord] = []
    converged = False
    betas = None
    funnel_scaled = ref_funnel
    prev_sdp_funnel = None
    last_gamma = None
    last_lin = None
    last_lambda_w = None

    for it in range(1, config.n_max + 1):
        t0 = time.perf_counter()

        # 1) trajectory update around the reference
        lin_ref = mdl.discretize_trajectory(
            model, ref_traj.t, ref_traj.x, ref_traj.u, config.substeps
        )
        funnel_tighten = (ref_funnel.Q, ref_funnel.K) if joint else None
        ts = trajopt.build_and_solve_traj_socp(
            ref_traj, lin_ref, funnel_tighten, cs, weights
        )
        traj = ts.trajectory
        d_t = convergence_metrics(traj, ref_traj)[0]

        if not joint:
            records.append(
                IterationRecord(it, d_t, 0.0, ts.cost_traj, 0.0,
                                float(ts.vc_norms.sum()), time.perf_counter() - t0)
            )
            ref_traj = traj
            if d_t < config.tol_traj:
                converged = True
                break
            continue

        # 2) Lipschitz constants around the new nominal, sampling the
        #    reference funnel
        lin = mdl.discretize_trajectory(model, traj.t, traj.x, traj.u, config.substeps)
        E_k = lin.h * model.E
        gam = lip.estimate_gamma_for_funnel(
            model, traj, lin, ref_funnel.Q, ref_funnel.K, E_k,
            n_samples=config.n_lip_samples, kappa=config.kappa_gamma,
            seed=config.seed, method=config.gamma_method,
            substeps=config.substeps,
        )

        # 3) funnel update with lambda_w grid search
        def solve_one(lam_w, _lin=lin, _Ek=E_k, _g=gam.gamma):
            return build_and_solve_funnel_sdp(
                _lin, _Ek, model.C, model.D, model.G, _g,
                LyapunovParams(alpha=config.alpha, lambda_w=lam_w),
                ref_funnel.Q, ref_funnel.Y, cs.Q_i, cs.Q_f, config.w_trf,
            )

        lam_chosen, fs = lambda_w_grid_search(
            [c * config.alpha for c in config.lambda_w_grid], solve_one
        )
        last_gamma, last_lin, last_lambda_w = gam.gamma, lin, lam_chosen
        log.info("iter %d: lambda_w = %.4g, funnel objective = %.6g",
                 it, lam_chosen, fs.objective)

        # delta_F compares successive unscaled SDP solutions so the support
        # rescaling between iterations does not mask convergence
        d_t, d_f = convergence_metrics(
            traj, ref_traj, fs.funnel, prev_sdp_funnel if prev_sdp_funnel is not None else ref_funnel
        )
        prev_sdp_funnel = fs.funnel

        # 4) support values and scaling
        betas = sup.compute_beta(
            lin, E_k, model.C, model.D, model.G, fs.funnel, gam.gamma, config.alpha
        )
        funnel_scaled = sup.apply_support_scaling(fs.funnel, betas)

        records.append(
            IterationRecord(it, d_t, d_f, ts.cost_traj, fs.objective,
                            float(ts.vc_norms.sum()), time.perf_counter() - t0)
        )
        log.info("iter %d: delta_T = %.3e, delta_F = %.3e, vc = %.3e",
                 it, d_t, d_f, float(ts.vc_norms.sum()))

        ref_traj = traj
        ref_funnel = funnel_scaled
        if d_t < config.tol_traj and d_f < config.tol_funnel:
            converged = True
            break

    return RunResult(
        trajectory=ref_traj,
        funnel=funnel_scaled if joint else None,
        betas=betas,
        records=records,
        converged=converged,
        config=config,
        funnel_unscaled=prev_sdp_funnel if joint else None,
        gamma=last_gamma,
        linearization=last_lin,
        lambda_w=last_lambda_w,
    )
