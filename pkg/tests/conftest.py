import numpy as np
import pytest

from tperiodic.assembly import build_system
from tperiodic.materials import transformer_materials
from tperiodic.mesh import RectRegion, build_rectilinear_mesh, transformer_regions


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


@pytest.fixture(scope="session")
def materials():
    return transformer_materials()


@pytest.fixture(scope="session")
def small_mixed_mesh():
    """A <= 50 dof mesh containing iron, steel and air."""
    regions = [
        RectRegion(0.0, 0.06, 0.0, 0.05, "air"),
        RectRegion(0.01, 0.05, 0.01, 0.04, "iron"),
        RectRegion(0.02, 0.04, 0.02, 0.03, "steel"),
    ]
    mesh = build_rectilinear_mesh(regions, 6, 5)
    assert mesh.n_dof <= 50
    return mesh


@pytest.fixture(scope="session")
def coarse_transformer_mesh():
    return build_rectilinear_mesh(transformer_regions(), 16, 16)


@pytest.fixture(scope="session")
def coarse_transformer(coarse_transformer_mesh, materials):
    return build_system(coarse_transformer_mesh, materials, N=16)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; lines are repeated in the terminal summary."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
