"""Bit-stable result export: CSV tables with 17-significant-digit floats,
a JSON run summary, and per-figure data files for downstream plotting."""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from typing import List, Optional

import numpy as np

from . import conic
from .funnel_sdp import Funnel
from .pipeline import IterationRecord, ObstacleSpec, RunConfig, RunResult
from .trajopt import Trajectory
from .verify import VerificationReport


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_csv(path, header: List[str], rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join("" if c is None else (_fmt(c) if isinstance(c, float) else str(c)) for c in row) + "\n")


def write_trajectory(path, traj: Trajectory) -> None:
    n_x = traj.x.shape[1]
    n_u = traj.u.shape[1]
    header = ["k", "t"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)]
    rows = []
    for k in range(traj.N + 1):
        u = [float(traj.u[k][i]) for i in range(n_u)] if k < traj.N else [None] * n_u
        rows.append([k, float(traj.t[k])] + [float(v) for v in traj.x[k]] + u)
    _write_csv(path, header, rows)


def write_funnel(path, funnel: Funnel) -> None:
    n_x = funnel.Q.shape[1]
    n_u = funnel.K.shape[1]
    m = conic.svec_dim(n_x)
    header = (
        ["k"]
        + [f"svecQ{i}" for i in range(m)]
        + [f"Y{i}" for i in range(n_u * n_x)]
        + [f"K{i}" for i in range(n_u * n_x)]
        + ["beta"]
    )
    beta = funnel.beta if funnel.beta is not None else np.ones(funnel.N + 1)
    rows = []
    for k in range(funnel.N + 1):
        q = [float(v) for v in conic.svec_pack(funnel.Q[k])]
        if k < funnel.N:
            y = [float(v) for v in funnel.Y[k].ravel()]
            kk = [float(v) for v in funnel.K[k].ravel()]
        else:
            y = [None] * (n_u * n_x)
            kk = [None] * (n_u * n_x)
        rows.append([k] + q + y + kk + [float(beta[k])])
    _write_csv(path, header, rows)


def write_iterations(path, records: List[IterationRecord]) -> None:
    header = ["iteration", "delta_traj", "delta_funnel", "traj_cost", "funnel_objective", "vc_norm"]
    rows = [
        [r.iteration, float(r.delta_traj), float(r.delta_funnel),
         float(r.traj_cost), float(r.funnel_objective), float(r.vc_norm)]
        for r in records
    ]
    _write_csv(path, header, rows)


def write_verification(path, rep: VerificationReport) -> None:
    n_s, n_nodes = rep.containment.shape
    m_x = rep.obstacle_margins.shape[2]
    m_u = rep.input_margins.shape[2]
    n_u = rep.inputs.shape[2]
    header = (
        ["sample", "node", "containment"]
        + [f"obstacle_margin{i}" for i in range(m_x)]
        + [f"input_margin{j}" for j in range(m_u)]
        + [f"u{i}" for i in range(n_u)]
    )
    rows = []
    for s in range(n_s):
        for k in range(n_nodes):
            im = [float(v) for v in rep.input_margins[s, k]] if k < n_nodes - 1 else [None] * m_u
            uu = [float(v) for v in rep.inputs[s, k]] if k < n_nodes - 1 else [None] * n_u
            rows.append(
                [s, k, float(rep.containment[s, k])]
                + [float(v) for v in rep.obstacle_margins[s, k]]
                + im + uu
            )
    _write_csv(path, header, rows)


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    for key, val in d.items():
        if isinstance(val, np.ndarray):
            d[key] = val.tolist()
    d["obstacles"] = [
        {"center": list(o["center"]), "diameters": list(o["diameters"])}
        for o in d["obstacles"]
    ]
    d["lambda_w_grid"] = list(d["lambda_w_grid"])
    return d


def config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    obstacles = [ObstacleSpec(tuple(o["center"]), tuple(o["diameters"])) for o in d.pop("obstacles")]
    for key in ("x_i", "x_f", "Q_i", "Q_f", "input_lo", "input_hi", "initial_diameters"):
        d[key] = np.asarray(d[key], float)
    d["lambda_w_grid"] = tuple(d["lambda_w_grid"])
    return RunConfig(obstacles=obstacles, **d)


def write_summary(path, result: RunResult) -> None:
    last = result.records[-1] if result.records else None
    out = {
        "converged": result.converged,
        "iterations": len(result.records),
        "final_delta_traj": last.delta_traj if last else None,
        "final_delta_funnel": last.delta_funnel if last else None,
        "final_traj_cost": last.traj_cost if last else None,
        "mode": result.config.mode,
        "config": config_to_dict(result.config),
    }
    with open(path, "w", newline="\n") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")


def write_bundle(outdir, result: RunResult) -> None:
    os.makedirs(outdir, exist_ok=True)
    write_trajectory(os.path.join(outdir, "trajectory.csv"), result.trajectory)
    if result.funnel is not None:
        write_funnel(os.path.join(outdir, "funnel.csv"), result.funnel)
    write_iterations(os.path.join(outdir, "iterations.csv"), result.records)
    write_summary(os.path.join(outdir, "summary.json"), result)


# ---------------------------------------------------------------------------
# Loading (for the verify / export-figures subcommands)


def _read_csv(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    return header, rows


def load_trajectory(path) -> Trajectory:
    header, rows = _read_csv(path)
    n_x = sum(1 for h in header if h.startswith("x"))
    n_u = sum(1 for h in header if h.startswith("u"))
    t = np.array([float(r[1]) for r in rows])
    x = np.array([[float(v) for v in r[2 : 2 + n_x]] for r in rows])
    u = np.array([[float(v) for v in r[2 + n_x : 2 + n_x + n_u]] for r in rows[:-1]])
    return Trajectory(t=t, x=x, u=u)


def load_funnel(path) -> Funnel:
    header, rows = _read_csv(path)
    m = sum(1 for h in header if h.startswith("svecQ"))
    nk = sum(1 for h in header if h.startswith("K"))
    n_x = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    n_u = nk // n_x
    Q = np.array([conic.svec_unpack(np.array([float(v) for v in r[1 : 1 + m]])) for r in rows])
    Y = np.array(
        [[float(v) for v in r[1 + m : 1 + m + nk]] for r in rows[:-1]]
    ).reshape(-1, n_u, n_x)
    K = np.array(
        [[float(v) for v in r[1 + m + nk : 1 + m + 2 * nk]] for r in rows[:-1]]
    ).reshape(-1, n_u, n_x)
    beta = np.array([float(r[-1]) for r in rows])
    return Funnel(Q=Q, Y=Y, K=K, beta=beta)


def load_summary(path) -> dict:
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Figure data


def ellipse_shadow(S, coords=(0, 1)):
    """Exact shadow of {e: e' S^-1 e <= 1} onto the given coordinates; the
    blockwise inverse reduces to the plain sub-block of S."""
    idx = np.ix_(coords, coords)
    return np.asarray(S, float)[idx]


def ellipse_polyline(S2, center, n_points: int = 64):
    lam, V = np.linalg.eigh((S2 + S2.T) / 2)
    sq = V @ np.diag(np.sqrt(np.clip(lam, 0.0, None))) @ V.T
    th = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
    circ = np.stack([np.cos(th), np.sin(th)])
    return (np.asarray(center, float)[:, None] + sq @ circ).T


def export_figures_data(solution_dir, outdir=None, n_points: int = 64) -> dict:
    """Emit per-figure CSV data; returns element counts for self-reporting."""
    outdir = outdir or os.path.join(solution_dir, "figures")
    os.makedirs(outdir, exist_ok=True)
    traj = load_trajectory(os.path.join(solution_dir, "trajectory.csv"))
    summary = load_summary(os.path.join(solution_dir, "summary.json"))
    cfg = summary["config"]

    counts = {"ellipses": 0, "obstacles": 0, "iterations": 0}

    funnel_path = os.path.join(solution_dir, "funnel.csv")
    rows = []
    if os.path.exists(funnel_path):
        funnel = load_funnel(funnel_path)
        for k in range(funnel.N + 1):
            S2 = ellipse_shadow(funnel.Q[k], (0, 1))
            for i, pt in enumerate(ellipse_polyline(S2, traj.x[k][:2], n_points)):
                rows.append([k, i, float(pt[0]), float(pt[1])])
            counts["ellipses"] += 1
    _write_csv(os.path.join(outdir, "fig2_ellipses.csv"), ["k", "i", "x", "y"], rows)

    rows = []
    for j, ob in enumerate(cfg["obstacles"]):
        S2 = np.diag((np.asarray(ob["diameters"], float) / 2.0) ** 2)
        for i, pt in enumerate(ellipse_polyline(S2, ob["center"], n_points)):
            rows.append([j, i, float(pt[0]), float(pt[1])])
        counts["obstacles"] += 1
    _write_csv(os.path.join(outdir, "fig2_obstacles.csv"), ["obstacle", "i", "x", "y"], rows)

    _write_csv(
        os.path.join(outdir, "fig2_nominal.csv"),
        ["k", "x", "y"],
        [[k, float(traj.x[k][0]), float(traj.x[k][1])] for k in range(traj.N + 1)],
    )

    n_u = traj.u.shape[1]
    _write_csv(
        os.path.join(outdir, "fig3_inputs.csv"),
        ["k", "t"] + [f"u{i}" for i in range(n_u)],
        [[k, float(traj.t[k])] + [float(v) for v in traj.u[k]] for k in range(traj.N)],
    )

    ver_path = os.path.join(solution_dir, "verification.csv")
    rows = []
    if os.path.exists(ver_path):
        header, vrows = _read_csv(ver_path)
        u_cols = [i for i, h in enumerate(header) if h.startswith("u") and not h.startswith("input")]
        k_col = header.index("node")
        s_col = header.index("sample")
        for r in vrows:
            if r[u_cols[0]] == "":
                continue
            rows.append([int(r[s_col]), int(r[k_col])] + [float(r[c]) for c in u_cols])
    _write_csv(
        os.path.join(outdir, "fig3_samples.csv"),
        ["sample", "k"] + [f"u{i}" for i in range(n_u)],
        rows,
    )

    header, irows = _read_csv(os.path.join(solution_dir, "iterations.csv"))
    rows = [[int(r[0]), float(r[1]), float(r[2])] for r in irows]
    counts["iterations"] = len(rows)
    _write_csv(
        os.path.join(outdir, "fig4_convergence.csv"),
        ["iteration", "delta_traj", "delta_funnel"],
        rows,
    )
    return counts
