"""Fixtures: a converged benchmark bundle with exported figure data.

The solver package is used only to manufacture test inputs; the renderer
under test consumes nothing but the CSV files."""

import pytest


@pytest.fixture(scope="session")
def figure_dir(tmp_path_factory):
    from funnelsyn import cli, export, pipeline

    cfg = pipeline.RunConfig()
    res = pipeline.run(cfg)
    assert res.converged
    out = tmp_path_factory.mktemp("bundle")
    export.write_bundle(str(out), res)
    code = cli.main(["verify", "--solution", str(out), "--samples", "20"])
    assert code == 0
    export.export_figures_data(str(out))
    return out / "figures", cfg.N
