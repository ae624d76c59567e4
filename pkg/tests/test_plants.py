import numpy as np
import pytest

from bcgm.lti import check_closed_loop, spectral_radius, stationary_state_covariance
from bcgm.plants import PLANTS, get_plant, lqg_gains, stable_demo, unstable


def test_registry():
    assert {"stable_demo", "unstable"} <= set(PLANTS)
    with pytest.raises(KeyError):
        get_plant("no_such_plant")


def test_stable_demo_properties():
    setup = stable_demo()
    assert spectral_radius(setup.model.A) == pytest.approx(0.95, abs=1e-9)
    # controllable canonical form: the output row holds the numerator coefficients
    zeros = np.roots(np.trim_zeros(setup.model.C[0], "f"))
    assert np.any(np.abs(zeros) > 1)  # non-minimum phase
    S = stationary_state_covariance(setup.model, setup.controller)
    np.testing.assert_allclose(setup.initial_cov, S[:4, :4])


def test_unstable_plant_and_its_data_controller():
    setup = unstable()
    assert spectral_radius(setup.model.A) > 1
    assert check_closed_loop(setup.model, setup.controller) < 1
    S = stationary_state_covariance(setup.model, setup.controller)
    np.testing.assert_allclose(setup.initial_cov, S[:2, :2])
    np.testing.assert_allclose(setup.cross_cov, S[:2, 2:])
    np.testing.assert_allclose(setup.controller.Sigma_phi, S[2:, 2:])


def test_lqg_gains_stabilize():
    model = unstable().model
    for weight in (1.0, 100.0):
        K, L = lqg_gains(model, weight)
        assert spectral_radius(model.A - model.B @ K) < 1
        assert spectral_radius(model.A - L @ model.C) < 1
