import numpy as np
import pytest

from kelvintrack.field import DipoleArray
from kelvintrack.motion import Constant, ConstantTarget, LineSegment, MotionLaw, build_disk_quadrature

# criterion number -> list of (label, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[num]
        ok = all(p for _, p, _ in entries)
        tr.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}")
        for label, passed, detail in entries:
            tr.write_line(f"    [{'pass' if passed else 'FAIL'}] {label}: {detail}")


@pytest.fixture(scope="session")
def ring():
    return DipoleArray.ring()


@pytest.fixture(scope="session")
def line_law():
    return MotionLaw("time", LineSegment([0.0, 0.0], [1.0, 0.0]), Constant(1.0), 1.0, (-0.75, 0.0), 0.2)


@pytest.fixture(scope="session")
def line_quad():
    return build_disk_quadrature(0.2, (-0.75, 0.0))


@pytest.fixture(scope="session")
def arc_law():
    return MotionLaw("arc", LineSegment.between([-0.75, 0.0], [0.0, 0.0]), Constant(1.0), 0.75,
                     (0.0, 0.0), 0.2)


@pytest.fixture(scope="session")
def origin_quad():
    return build_disk_quadrature(0.2, (0.0, 0.0))


@pytest.fixture(scope="session")
def f1():
    return ConstantTarget((1.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_points_in_disk(rng, n, radius=1.0, min_sep=0.05, dipoles=None):
    out = []
    while len(out) < n:
        p = rng.uniform(-radius, radius, 2)
        if np.linalg.norm(p) >= radius:
            continue
        if dipoles is not None and np.min(np.linalg.norm(dipoles.positions - p, axis=1)) < min_sep:
            continue
        out.append(p)
    return np.array(out)
