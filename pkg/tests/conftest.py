import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from boundary_reflections.bvp import BoundaryCondition, ProblemSpec
from boundary_reflections.geometry import GeometryLayout, make_circle

settings.register_profile(
    "repo", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def annulus_layout():
    inner = make_circle((0.0, 0.0), 1.0, 128, name="inner")
    outer = make_circle((0.0, 0.0), 10.0, 128, name="container")
    return GeometryLayout((inner,), outer)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def triangle_dirichlet(side=6.0, radius=0.5, nodes=64, container_nodes=256, datum=1.0):
    from boundary_reflections.geometry import triangle_layout

    layout = triangle_layout(side, radius, nodes, 10.0, container_nodes)
    return ProblemSpec(layout, [BoundaryCondition.dirichlet(datum)] * 3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
