import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mfelab.geometry import annulus, disk, triangulate  # noqa: E402

PI = math.pi


@pytest.fixture(scope="session")
def disk_spec():
    return disk()


@pytest.fixture(scope="session")
def annulus_spec():
    return annulus((0.0, 0.0), 0.25, 1.0)


@pytest.fixture(scope="session")
def offset_spec():
    return annulus((0.3, 0.0), 0.02, 1.0)


@pytest.fixture(scope="session")
def disk_mesh_coarse(disk_spec):
    return triangulate(disk_spec, 0.05)


@pytest.fixture(scope="session")
def disk_mesh_fine(disk_spec):
    return triangulate(disk_spec, 0.02)


@pytest.fixture(scope="session")
def annulus_mesh(annulus_spec):
    return triangulate(annulus_spec, 0.04)


@pytest.fixture(scope="session")
def disk_blowup_branch():
    from mfelab.mfe_solver import blowup_mesh, continue_branch

    m = blowup_mesh(disk(), 0.05, (0.0, 0.0), 8)
    return continue_branch(m, None, lambda_cap=8, center=(0.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
