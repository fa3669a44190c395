import time
from pathlib import Path
from types import SimpleNamespace

import pytest

from goddard import cli
from goddard.direct import DirectOptions, solve_direct, solve_onoff

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def rec(n: int, passed: bool, detail: str = ""):
        ACCEPTANCE[n] = (bool(passed), detail)
        return passed

    return rec


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  (not evaluated)")


@pytest.fixture(scope="session")
def ref_config():
    return cli.load_config("reference")


@pytest.fixture(scope="session")
def full_run(ref_config, tmp_path_factory):
    """The complete indirect pipeline on the bundled configuration, run once per session."""
    out = tmp_path_factory.mktemp("indirect_full")
    t0 = time.perf_counter()
    res = cli.indirect_full(ref_config, out)
    elapsed = time.perf_counter() - t0
    doc = cli.indirect_document(res.solution, ref_config, res.diagnostics)
    path = Path(out) / "solution.json"
    cli.atomic_write(path, cli.dumps(doc))
    return SimpleNamespace(result=res, sol=res.solution, doc=doc, path=path, out=Path(out), elapsed=elapsed)


@pytest.fixture(scope="session")
def direct_run(ref_config):
    opts = DirectOptions(N=100)
    t0 = time.perf_counter()
    ds = solve_direct(100, ref_config.model, ref_config.boundary, opts)
    return SimpleNamespace(sol=ds, elapsed=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def onoff_run(ref_config):
    t0 = time.perf_counter()
    ds = solve_onoff(ref_config.model, ref_config.boundary, DirectOptions(), n_on=60)
    return SimpleNamespace(sol=ds, elapsed=time.perf_counter() - t0)
