"""Built-in plants and their data-collection controllers.

``stable_demo`` is a fixed synthetic 4-state SISO system: two lightly damped
resonances (pole radii 0.95 and 0.93), relative degree three and a
non-minimum-phase zero. Its matrices are committed as literals so the suite
never depends on how they were generated. ``unstable`` is a 2-state plant with
one open-loop pole at 1.10; it is excited through an observer-based
stabilizing controller because white noise alone would let it diverge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are

from .lti import StabilizingController, StateSpaceModel, check_closed_loop, stationary_state_covariance

PROCESS_VARIANCE = 0.01
MEASUREMENT_VARIANCE = 0.04

STABLE_DEMO_A = [
    [1.3731149058327767, -1.4805141584953792, 1.1806805481192002, -0.7805722500000001],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
]
STABLE_DEMO_B = [[0.5], [0.0], [0.0], [0.0]]
STABLE_DEMO_C = [[0.0, 0.0, 0.5369030787013863, 0.962553744930627]]
STABLE_DEMO_EXCITATION = 4.0

UNSTABLE_A = [[1.10, 0.20], [0.0, 0.98]]
UNSTABLE_B = [[0.5], [0.2]]
UNSTABLE_C = [[1.0, 0.0]]
UNSTABLE_EXCITATION = 25.0
UNSTABLE_INPUT_WEIGHT = 100.0


@dataclass(frozen=True)
class PlantSetup:
    """A plant together with the controller and initial-state law used to collect data.

    Attributes:
        initial_cov: covariance of the plant state at the start of a data run.
        cross_cov: ``E[x_1 phi_1^T]``; ``None`` means independent draws.
    """

    name: str
    model: StateSpaceModel
    controller: StabilizingController
    initial_cov: np.ndarray
    cross_cov: np.ndarray | None = None


def _noise(n: int, p: int):
    return PROCESS_VARIANCE * np.eye(n), MEASUREMENT_VARIANCE * np.eye(p)


def stable_demo_model() -> StateSpaceModel:
    Q, R = _noise(4, 1)
    return StateSpaceModel(np.array(STABLE_DEMO_A), np.array(STABLE_DEMO_B), np.array(STABLE_DEMO_C), Q, R)


def unstable_model() -> StateSpaceModel:
    Q, R = _noise(2, 1)
    return StateSpaceModel(np.array(UNSTABLE_A), np.array(UNSTABLE_B), np.array(UNSTABLE_C), Q, R)


def lqg_gains(model: StateSpaceModel, input_weight: float = 1.0):
    """State-feedback gain ``K`` and observer gain ``L`` from the two Riccati equations.

    The regulator weighs ``C^T C`` against ``input_weight * I``; the observer
    uses the plant's own ``Q`` and ``R``.
    """
    A, B, C = model.A, model.B, model.C
    Rk = input_weight * np.eye(model.m)
    P = solve_discrete_are(A, B, C.T @ C, Rk)
    K = np.linalg.solve(Rk + B.T @ P @ B, B.T @ P @ A)
    S = solve_discrete_are(A.T, C.T, model.Q, model.R)
    L = A @ S @ C.T @ np.linalg.inv(C @ S @ C.T + model.R)
    return K, L


def stable_demo(excitation: float = STABLE_DEMO_EXCITATION) -> PlantSetup:
    """Open-loop white-noise excitation started from the stationary state covariance."""
    model = stable_demo_model()
    ctrl = StabilizingController.white_noise(model.m, model.p, excitation)
    joint = stationary_state_covariance(model, ctrl)
    return PlantSetup("stable_demo", model, ctrl, joint[:model.n, :model.n])


def unstable(excitation: float = UNSTABLE_EXCITATION,
             input_weight: float = UNSTABLE_INPUT_WEIGHT) -> PlantSetup:
    """Observer-based excitation started from the stationary joint law of plant and controller.

    The regulator is deliberately gentle and the excitation large: feedback
    inside the prediction window biases the fitted predictor, and that bias
    shrinks as the excitation dominates the feedback term.
    """
    model = unstable_model()
    K, L = lqg_gains(model, input_weight)
    n = model.n
    ctrl0 = StabilizingController.observer_based(model, K, L, excitation)
    check_closed_loop(model, ctrl0)
    joint = stationary_state_covariance(model, ctrl0)
    ctrl = StabilizingController(ctrl0.A_ctrl, ctrl0.B_ctrl, ctrl0.C_ctrl, ctrl0.R_ctrl, joint[n:, n:])
    return PlantSetup("unstable", model, ctrl, joint[:n, :n], joint[:n, n:])


PLANTS = {"stable_demo": stable_demo, "unstable": unstable}


def get_plant(name: str, **kwargs) -> PlantSetup:
    try:
        factory = PLANTS[name]
    except KeyError:
        raise KeyError(f"unknown plant {name!r}; choose from {sorted(PLANTS)}") from None
    return factory(**kwargs)
