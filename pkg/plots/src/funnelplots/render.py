"""Figure rendering from an exported solution bundle.

Reads the per-figure CSV files produced by ``funnelsyn export-figures`` and
renders three figures: the position-plane trajectory with funnel ellipse
outlines and obstacles, the input time histories, and the convergence
curves.  Rendering is purely file-driven; nothing is recomputed from the
underlying optimization.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

ALL_FIGURES = ("trajectory", "inputs", "convergence")

DEFAULT_COLORS = {
    "nominal": "tab:orange",
    "funnel": "tab:blue",
    "obstacle": "tab:red",
}


class MissingDataError(Exception):
    """A required bundle file is absent; carries the missing path."""


@dataclass
class FigureSpec:
    input_dir: str
    output_dir: str
    figures: tuple = ALL_FIGURES
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))
    dpi: int = 150


def _read_table(path):
    """Read a headered CSV into (header, float ndarray); rows may be empty."""
    if not os.path.exists(path):
        raise MissingDataError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    return header, data


def _group_polylines(data, key_col, x_col, y_col):
    """Split (key, x, y) rows into closed polylines, one per distinct key."""
    out = []
    for key in np.unique(data[:, key_col]) if data.size else []:
        sel = data[data[:, key_col] == key]
        xy = np.vstack([sel[:, [x_col, y_col]], sel[:1, [x_col, y_col]]])
        out.append(xy)
    return out


def _step_extend(t, y):
    """Append a closing point so a piecewise-constant plot covers the last
    interval."""
    dt = t[-1] - t[-2] if len(t) > 1 else 1.0
    return np.append(t, t[-1] + dt), np.vstack([y, y[-1:]])


def render_trajectory(spec: FigureSpec) -> dict:
    _, ell = _read_table(os.path.join(spec.input_dir, "fig2_ellipses.csv"))
    _, obs = _read_table(os.path.join(spec.input_dir, "fig2_obstacles.csv"))
    _, nom = _read_table(os.path.join(spec.input_dir, "fig2_nominal.csv"))

    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    ellipses = _group_polylines(ell, 0, 2, 3)
    for xy in ellipses:
        ax.plot(xy[:, 0], xy[:, 1], color=spec.colors["funnel"], lw=0.7, alpha=0.8)
    obstacles = _group_polylines(obs, 0, 2, 3)
    for xy in obstacles:
        ax.fill(xy[:, 0], xy[:, 1], color=spec.colors["obstacle"], alpha=0.35)
        ax.plot(xy[:, 0], xy[:, 1], color=spec.colors["obstacle"], lw=1.2)
    ax.plot(nom[:, 1], nom[:, 2], color=spec.colors["nominal"], lw=1.8,
            label="nominal")
    ax.set_xlabel("$r_x$ [m]")
    ax.set_ylabel("$r_y$ [m]")
    ax.set_aspect("equal")
    ax.legend(loc="upper left")
    path = os.path.join(spec.output_dir, "trajectory.png")
    fig.savefig(path, dpi=spec.dpi)
    plt.close(fig)
    return {"file": path, "ellipses": len(ellipses), "obstacles": len(obstacles)}


def render_inputs(spec: FigureSpec) -> dict:
    header, inp = _read_table(os.path.join(spec.input_dir, "fig3_inputs.csv"))
    n_u = len(header) - 2
    t = inp[:, 1]
    u = inp[:, 2:]

    # sample envelopes are optional: an absent or empty table degrades to a
    # nominal-only rendering
    samples = np.empty((0, 2 + n_u))
    try:
        _, samples = _read_table(os.path.join(spec.input_dir, "fig3_samples.csv"))
    except MissingDataError:
        pass
    n_samples = int(len(np.unique(samples[:, 0]))) if samples.size else 0

    fig, axes = plt.subplots(n_u, 1, figsize=(6.0, 2.2 * n_u), sharex=True,
                             squeeze=False)
    for i in range(n_u):
        ax = axes[i, 0]
        if n_samples:
            lo = np.array([samples[samples[:, 1] == k, 2 + i].min() for k in range(len(t))])
            hi = np.array([samples[samples[:, 1] == k, 2 + i].max() for k in range(len(t))])
            ts, lo_s = _step_extend(t, lo[:, None])
            _, hi_s = _step_extend(t, hi[:, None])
            ax.fill_between(ts, lo_s[:, 0], hi_s[:, 0], step="post",
                            color=spec.colors["funnel"], alpha=0.3,
                            label="sample envelope")
        ts, us = _step_extend(t, u[:, i:i + 1])
        ax.step(ts, us[:, 0], where="post", color=spec.colors["nominal"],
                lw=1.6, label="nominal")
        ax.set_ylabel(f"$u_{{{i}}}$")
        ax.legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("$t$ [s]")
    path = os.path.join(spec.output_dir, "inputs.png")
    fig.savefig(path, dpi=spec.dpi)
    plt.close(fig)
    return {"file": path, "channels": n_u, "samples": n_samples}


def render_convergence(spec: FigureSpec) -> dict:
    _, conv = _read_table(os.path.join(spec.input_dir, "fig4_convergence.csv"))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    its = conv[:, 0]
    ax.semilogy(its, np.maximum(conv[:, 1], 1e-300), "o-",
                color=spec.colors["nominal"], label=r"$\Delta_T$")
    if conv.shape[1] > 2 and np.any(conv[:, 2] > 0):
        ax.semilogy(its, np.maximum(conv[:, 2], 1e-300), "s-",
                    color=spec.colors["funnel"], label=r"$\Delta_F$")
    ax.set_xlabel("iteration")
    ax.set_ylabel("squared update norm")
    ax.legend()
    path = os.path.join(spec.output_dir, "convergence.png")
    fig.savefig(path, dpi=spec.dpi)
    plt.close(fig)
    return {"file": path, "iterations": len(its)}


_RENDERERS = {
    "trajectory": render_trajectory,
    "inputs": render_inputs,
    "convergence": render_convergence,
}


def render(spec: FigureSpec) -> dict:
    """Render the selected figures; returns per-figure element counts."""
    os.makedirs(spec.output_dir, exist_ok=True)
    report = {}
    for name in spec.figures:
        report[name] = _RENDERERS[name](spec)
    return report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="funnel-plots",
        description="render figures from an exported figure-data directory",
    )
    ap.add_argument("--in", dest="input_dir", required=True,
                    help="directory with fig*_*.csv files")
    ap.add_argument("--out", dest="output_dir", required=True,
                    help="directory for the rendered images")
    ap.add_argument("--figures", nargs="+", choices=ALL_FIGURES,
                    default=list(ALL_FIGURES))
    ap.add_argument("--dpi", type=int, default=150)
    args = ap.parse_args(argv)

    spec = FigureSpec(input_dir=args.input_dir, output_dir=args.output_dir,
                      figures=tuple(args.figures), dpi=args.dpi)
    try:
        report = render(spec)
    except MissingDataError as e:
        print(f"error: missing figure data file: {e}", file=sys.stderr)
        return 1
    for name, info in report.items():
        counts = " ".join(f"{k}={v}" for k, v in info.items() if k != "file")
        print(f"{name}: {os.path.basename(info['file'])} {counts}")
    print(f"{len(report)} images written to {spec.output_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
