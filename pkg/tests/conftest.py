import numpy as np
import pytest

from ksmotion.fixtures import branched_tree_doc, load, mimic_gripper_doc, pendulum_doc, planar_arm_doc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planar2():
    return load(planar_arm_doc([0.4, 0.3]))


@pytest.fixture(scope="session")
def planar3():
    return load(planar_arm_doc([0.4, 0.3, 0.2], radius=0.03))


@pytest.fixture(scope="session")
def gripper():
    return load(mimic_gripper_doc())


@pytest.fixture(scope="session")
def branched():
    return load(branched_tree_doc())


@pytest.fixture(scope="session")
def pendulum():
    return load(pendulum_doc(mass=2.0, length=0.5, izz=0.01))


def central_difference(fn, x, h=1e-6):
    """Jacobian of ``fn`` at ``x`` by central differences; output shape fn(x).shape + x.shape."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x))
    out = np.zeros(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[(Ellipsis,) + idx] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h)
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
