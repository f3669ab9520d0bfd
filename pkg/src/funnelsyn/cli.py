"""Command-line entry point: solve, verify, and export-figures subcommands.

Config files are flat INI text; see configs/SCHEMA.md for the field list.
Angle-valued numbers accept a `deg` suffix (converted to radians).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import export
from . import models as mdl
from . import pipeline
from . import verify as ver

log = logging.getLogger("funnelsyn")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_VERIFY_FAILED = 3


class ConfigError(ValueError):
    pass


def _num(tok: str) -> float:
    tok = tok.strip()
    if tok.endswith("deg"):
        return float(tok[:-3]) * np.pi / 180.0
    return float(tok)


def _vec(s: str) -> np.ndarray:
    return np.array([_num(t) for t in s.split()])


def load_config(path) -> pipeline.RunConfig:
    import configparser

    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    cfg = pipeline.RunConfig()

    def get(section, key, conv, default=None, required=False):
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                return conv(raw)
            except ValueError as e:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({e})") from e
        if required:
            raise ConfigError(f"[{section}] {key}: missing required field")
        return default

    cfg.model = get("problem", "model", str, cfg.model)
    cfg.N = get("problem", "n_nodes", int, cfg.N)
    cfg.t_f = get("problem", "t_f", _num, cfg.t_f)
    cfg.mode = get("problem", "mode", str, cfg.mode)
    cfg.substeps = get("problem", "substeps", int, cfg.substeps)

    cfg.x_i = get("boundary", "x_i", _vec, cfg.x_i)
    cfg.x_f = get("boundary", "x_f", _vec, cfg.x_f)
    qi = get("boundary", "q_i_semi_axes", _vec, None)
    if qi is not None:
        cfg.Q_i = np.diag(qi**2)
    qf = get("boundary", "q_f_semi_axes", _vec, None)
    if qf is not None:
        cfg.Q_f = np.diag(qf**2)

    if cp.has_section("obstacles"):
        cfg.obstacles = []
        for key in cp.options("obstacles"):
            vals = _vec(cp.get("obstacles", key))
            if len(vals) != 4:
                raise ConfigError(f"[obstacles] {key}: expected 'cx cy d1 d2'")
            cfg.obstacles.append(
                pipeline.ObstacleSpec((vals[0], vals[1]), (vals[2], vals[3]))
            )

    cfg.input_lo = get("input", "lo", _vec, cfg.input_lo)
    cfg.input_hi = get("input", "hi", _vec, cfg.input_hi)

    cfg.w_v = get("weights", "w_v", _num, cfg.w_v)
    cfg.w_tr = get("weights", "w_tr", _num, cfg.w_tr)
    cfg.w_trf = get("weights", "w_trf", _num, cfg.w_trf)

    cfg.alpha = get("funnel", "alpha", _num, cfg.alpha)
    grid = get("funnel", "lambda_w_grid", _vec, None)
    if grid is not None:
        cfg.lambda_w_grid = tuple(grid.tolist())
    d = get("funnel", "initial_diameters", _vec, None)
    if d is not None:
        cfg.initial_diameters = d

    cfg.n_lip_samples = get("lipschitz", "n_samples", int, cfg.n_lip_samples)
    cfg.kappa_gamma = get("lipschitz", "kappa", _num, cfg.kappa_gamma)
    cfg.gamma_method = get("lipschitz", "method", str, cfg.gamma_method)

    cfg.seed = get("run", "seed", int, cfg.seed)
    cfg.tol_traj = get("run", "tol_traj", _num, cfg.tol_traj)
    cfg.tol_funnel = get("run", "tol_funnel", _num, cfg.tol_funnel)
    cfg.n_max = get("run", "n_max", int, cfg.n_max)

    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def cmd_solve(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.mode:
        cfg.mode = args.mode
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        result = pipeline.run(cfg)
    except Exception as e:
        print(f"error: solve failed: {e}", file=sys.stderr)
        return EXIT_ERROR
    export.write_bundle(args.out, result)
    last = result.records[-1]
    print(
        f"{'converged' if result.converged else 'not converged'} after "
        f"{len(result.records)} iterations "
        f"(delta_T={last.delta_traj:.3e}, delta_F={last.delta_funnel:.3e})"
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _load_solution(solution_dir):
    traj_path = os.path.join(solution_dir, "trajectory.csv")
    funnel_path = os.path.join(solution_dir, "funnel.csv")
    summary_path = os.path.join(solution_dir, "summary.json")
    for p in (traj_path, funnel_path, summary_path):
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    traj = export.load_trajectory(traj_path)
    funnel = export.load_funnel(funnel_path)
    cfg = export.config_from_dict(export.load_summary(summary_path)["config"])
    return traj, funnel, cfg


def cmd_verify(args) -> int:
    if args.samples <= 0:
        print("error: --samples must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        traj, funnel, cfg = _load_solution(args.solution)
    except FileNotFoundError as e:
        print(f"error: missing solve output: {e}", file=sys.stderr)
        return EXIT_ERROR
    model = mdl.get_model(cfg.model)
    cs = pipeline.make_constraint_set(cfg, model)
    rep = ver.run_verification(
        model, traj, funnel, cs, n_samples=args.samples, seed=args.seed,
        substeps=cfg.substeps, mode=args.disturbance,
    )
    export.write_verification(os.path.join(args.solution, "verification.csv"), rep)
    print(
        f"{'pass' if rep.passed else 'FAIL'}: {rep.n_samples} samples, "
        f"max containment {rep.worst_containment:.12g} (worst node {rep.worst_node}), "
        f"min obstacle margin {rep.min_obstacle_margin:.6g}, "
        f"min input margin {rep.min_input_margin:.6g}"
    )
    return EXIT_OK if rep.passed else EXIT_VERIFY_FAILED


def cmd_export_figures(args) -> int:
    try:
        counts = export.export_figures_data(args.solution, args.out)
    except FileNotFoundError as e:
        print(f"error: missing solve output: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(
        f"figure data written: ellipses={counts['ellipses']} "
        f"obstacles={counts['obstacles']} iterations={counts['iterations']}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("FUNNEL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))

    ap = argparse.ArgumentParser(prog="funnelsyn")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the joint synthesis")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["joint", "scp-only"], default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(fn=cmd_solve)

    s = sub.add_parser("verify", help="Monte Carlo invariance verification")
    s.add_argument("--solution", required=True)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--disturbance", choices=["sphere", "worst"], default="sphere")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("export-figures", help="emit per-figure data files")
    s.add_argument("--solution", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_export_figures)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
