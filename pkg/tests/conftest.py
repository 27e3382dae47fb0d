import numpy as np
import pytest

from pdmesh import shapes

CORPUS = {
    "tetrahedron": shapes.tetrahedron,
    "cube": shapes.cube,
    "octahedron": shapes.octahedron,
    "icosahedron": shapes.icosahedron,
    "icosphere2": lambda: shapes.icosphere(2),
    "hull100": lambda: shapes.random_hull(100, seed=0),
    "box3": lambda: shapes.box(3),
    "stellated_icosahedron": lambda: shapes.stellate(shapes.icosahedron()),
    "dome": shapes.dome,
}

# every corpus mesh is watertight, edge-manifold and genus 0
GENUS0 = list(CORPUS)


@pytest.fixture(params=sorted(CORPUS))
def corpus_mesh(request):
    return CORPUS[request.param]()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# one pass / fail line per acceptance criterion, repeated in the terminal summary

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``report(ok, detail)`` for the criterion numbered in the test name."""
    n = int(request.node.name.split("_")[2])
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(ok, detail):
        lines[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok

    yield report
    if n not in lines:
        report(False, "error before the measurement finished")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
