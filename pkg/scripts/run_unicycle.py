#!/usr/bin/env python3
"""End-to-end benchmark run: solve the unicycle problem, verify the funnel
by Monte Carlo rollout, export figure data, and (if the renderer package is
installed) render the figures."""

import argparse
import os
import sys

from funnelsyn import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(
        os.path.dirname(__file__), "..", "configs", "unicycle.cfg"))
    ap.add_argument("--out", default="results/unicycle")
    ap.add_argument("--samples", type=int, default=100)
    args = ap.parse_args()

    code = cli.main(["solve", "--config", args.config, "--out", args.out])
    if code != 0:
        return code
    code = cli.main(["verify", "--solution", args.out,
                     "--samples", str(args.samples)])
    if code != 0:
        return code
    code = cli.main(["export-figures", "--solution", args.out])
    if code != 0:
        return code

    try:
        from funnelplots import main as plots_main
    except ImportError:
        print("funnelplots not installed; skipping image rendering")
        return 0
    return plots_main(["--in", os.path.join(args.out, "figures"),
                       "--out", os.path.join(args.out, "img")])


if __name__ == "__main__":
    sys.exit(main())
