from pathlib import Path

import numpy as np
import pytest

from collapsing_kahler import BaseDomain, FibrationSpec, FieldExpression, MarkedPoint, solve_gke
from collapsing_kahler.config import load_spec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def config_path(name: str) -> Path:
    return CONFIGS / f"{name}.toml"


@pytest.fixture(scope="session")
def m4_spec():
    return load_spec(config_path("m4_disk"))


@pytest.fixture(scope="session")
def m4_gke(m4_spec):
    return solve_gke(m4_spec)


@pytest.fixture(scope="session")
def trivial_spec():
    return load_spec(config_path("trivial_torus"))


@pytest.fixture(scope="session")
def oracle_spec():
    return load_spec(config_path("oracle_torus"))


@pytest.fixture(scope="session")
def small_m4_spec():
    chi0 = FieldExpression("quadratic", {"mean": 1.5, "coef": 0.5})
    return FibrationSpec.build(BaseDomain.disk(48), [1j], [MarkedPoint.multiple_fiber(0, 4)],
                               chi=1.0, chi0=chi0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
