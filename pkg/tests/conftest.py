import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cgray.mesh import build_sphere_mesh  # noqa: E402
from cgray.surface import BranchConfiguration  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fam05():
    return BranchConfiguration.family(0.5)


@pytest.fixture(scope="session")
def mesh3(fam05):
    return build_sphere_mesh(fam05, 3)


@pytest.fixture(scope="session")
def mesh4(fam05):
    return build_sphere_mesh(fam05, 4)


@pytest.fixture(scope="session")
def mesh5(fam05):
    return build_sphere_mesh(fam05, 5)


def perturbed_configs(n=3, scale=0.1, seed=7):
    rng = np.random.default_rng(seed)
    base = np.array(BranchConfiguration.family(0.5).points)
    return [BranchConfiguration(tuple(base + scale * (rng.standard_normal(8)
                                                      + 1j * rng.standard_normal(8))))
            for _ in range(n)]
