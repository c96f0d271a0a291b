from pathlib import Path

import numpy as np
import pytest

from joao.graph import Dataset, Graph, write_tudataset
from joao.synthetic import cycles_vs_stars

DATA_DIR = Path(__file__).parent / "data"

_acceptance_results: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the build")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "acceptance", None)
    if marker is not None:
        _acceptance_results.append((marker, report.outcome, report.nodeid))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.acceptance = f"criterion {m.args[0]:>2}: {m.args[1]}"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    seen = {}
    for label, outcome, nodeid in _acceptance_results:
        prev = seen.get(label)
        seen[label] = outcome if prev in (None, "passed") else prev
    for label in sorted(seen):
        status = "PASS" if seen[label] == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return Graph(3, [(0, 1), (1, 2), (0, 2)], np.ones((3, 1)))


@pytest.fixture(scope="session")
def cvs_dataset():
    return cycles_vs_stars()


@pytest.fixture
def cvs_dir(tmp_path, cvs_dataset):
    d = tmp_path / "CVS"
    write_tudataset(cvs_dataset, d, "CVS")
    return d


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(3)
    graphs = []
    for k in range(12):
        n = int(rng.integers(3, 7))
        edges = [(u, (u + 1) % n) for u in range(n)]
        graphs.append(Graph.from_edges(n, edges, rng.normal(size=(n, 2)), label=k % 2))
    return Dataset("SMALL", tuple(graphs))
