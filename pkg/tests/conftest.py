"""Shared fixtures: the converged benchmark run (expensive, computed once
per session) and its exported bundle."""

import pytest

from funnelsyn import export, pipeline


@pytest.fixture(scope="session")
def benchmark_result():
    """Converged joint run on the shipped benchmark configuration."""
    import time

    cfg = pipeline.RunConfig()
    t0 = time.perf_counter()
    res = pipeline.run(cfg)
    res.wall_seconds = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def bundle_dir(benchmark_result, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    export.write_bundle(str(out), benchmark_result)
    return out
