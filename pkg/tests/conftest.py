import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bcgm.library import LibraryWidthWarning
from bcgm.lti import NoiseModel, StabilizingController, StateSpaceModel, simulate_closed_loop
from bcgm.numerics import RngStream
from bcgm.plants import stable_demo, unstable_model

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stable_model(rng: np.random.Generator, n=3, m=1, p=1, radius=0.9, q=0.01, r=0.04) -> StateSpaceModel:
    A = rng.standard_normal((n, n))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    return StateSpaceModel(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
                           q * np.eye(n), r * np.eye(p))


@pytest.fixture(scope="session")
def demo():
    return stable_demo()


@pytest.fixture(scope="session")
def unstable_plant():
    return unstable_model()


@pytest.fixture(scope="session")
def demo_library(demo):
    from bcgm.library import build_single

    traj = simulate_closed_loop(demo.model, demo.controller, NoiseModel(), 600 + 17, RngStream(5, 1),
                                demo.initial_cov)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LibraryWidthWarning)
        return build_single(traj, 8, 10)


@pytest.fixture
def white_noise():
    return StabilizingController.white_noise(1, 1)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
