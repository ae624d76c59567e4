import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcgm.cgm import RankDeficientWarning, fit
from bcgm.control import (ControlObjective, ControllerSpec, PredictiveController, SingularScatterError,
                          build_deepc, build_deepc_variant, build_kf_dmpc, build_spc, build_ssmpc_model,
                          build_sspc_gen, inverse_scatter, run_closed_loop, scenario_qp)
from bcgm.kalman import KfState, predictor_matrices
from bcgm.library import LibraryWidthWarning, build_single
from bcgm.lti import NoiseModel, StateSpaceModel, simulate_closed_loop, simulate_open_loop
from bcgm.numerics import RngStream
from bcgm.qp import QpProblem, solve

from qp_oracle import enumerate_active_sets

FREE = ControlObjective(y_upper=np.inf)


def solve_u(qp, m_T):
    sol = solve(qp)
    assert sol.status == "optimal"
    return sol.x[:m_T]


@pytest.fixture(scope="module")
def noise_free_library(demo):
    model = demo.model.noise_free()
    traj = simulate_closed_loop(model, demo.controller, NoiseModel(), 600 + 17, RngStream(12), demo.initial_cov)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", (LibraryWidthWarning, RankDeficientWarning))
        lib = build_single(traj, 8, 10)
        return lib, fit(lib)


def consistent_past(model, rng, T_ini=8):
    """Past window of a noise-free run plus the state it ends in."""
    x0 = rng.standard_normal(model.n)
    u = rng.standard_normal((T_ini, model.m))
    traj = simulate_open_loop(model.noise_free(), x0, np.vstack([u, np.zeros((1, model.m))]), NoiseModel(),
                              RngStream(0))
    return u.reshape(-1), traj.y[:T_ini].reshape(-1), traj.x[T_ini]


def test_scenario_objective_matches_per_scenario_sum():
    rng = np.random.default_rng(0)
    m, p, T, M = 1, 2, 3, 4
    Hu = rng.standard_normal((p * T, m * T))
    offsets = rng.standard_normal((M, p * T))
    obj = ControlObjective(y_ref=(1.0, -2.0), w_y=1.5, w_u=0.3, y_upper=(3.0, 4.0))
    qp = scenario_qp(Hu, offsets, obj, m, p, T)
    x = rng.standard_normal(qp.d)
    u, s = x[:m * T], x[m * T:]
    ref = obj.ref(p, T)
    expected = sum(obj.w_y * np.sum((Hu @ u + a - ref) ** 2) + obj.w_u * u @ u + obj.slack_weight * s @ s
                   for a in offsets)
    assert qp.objective(x) == pytest.approx(expected, rel=1e-10)
    # every scenario bounds the same slack
    G = qp.A_in[:M * p * T]
    np.testing.assert_allclose(qp.ub[:M * p * T], np.concatenate([obj.upper(p, T) - a for a in offsets]))
    np.testing.assert_allclose(G[:p * T, m * T:], -np.eye(p * T))


def test_single_zero_noise_scenario_equals_deterministic_controller(demo):
    model = demo.model.noise_free()
    kf = KfState(np.array([1.0, -0.5, 0.2, 0.0]), np.zeros((4, 4)))
    obj = ControlObjective()
    a = build_ssmpc_model(model, kf, obj, 1, RngStream(1), 10)
    b = build_kf_dmpc(model, kf, obj, 10)
    np.testing.assert_allclose(a.H, b.H)
    np.testing.assert_allclose(a.f, b.f)
    np.testing.assert_allclose(solve(a).x, solve(b).x, atol=1e-6)


def test_zero_noise_scenarios_coincide(demo):
    model = demo.model.noise_free()
    kf = KfState(np.ones(4), np.zeros((4, 4)))
    qp = build_ssmpc_model(model, kf, ControlObjective(), 5, RngStream(2), 10)
    ubs = qp.ub[:50].reshape(5, 10)
    np.testing.assert_allclose(ubs, ubs[0][None, :].repeat(5, axis=0))


def test_model_scenario_offsets(demo):
    kf = KfState(np.array([0.5, 0.0, -0.3, 0.1]), 0.2 * np.eye(4))
    obj = ControlObjective()
    qp = build_ssmpc_model(demo.model, kf, obj, 3, RngStream(3), 10)
    rng = RngStream(3)
    mats = predictor_matrices(demo.model, 10)
    x = kf.x_hat_minus + rng.standard_normal((3, 4)) @ np.linalg.cholesky(kf.P_minus).T
    w = (rng.standard_normal((30, 4)) @ np.linalg.cholesky(demo.model.Q).T).reshape(3, 40)
    v = (rng.standard_normal((30, 1)) @ np.sqrt(demo.model.R).T).reshape(3, 10)
    offsets = x @ mats.O_f.T + w @ mats.G_f.T + v
    np.testing.assert_allclose(qp.ub[:30], (obj.upper(1, 10) - offsets).reshape(-1), atol=1e-12)


def test_generative_scenarios_without_spread_reduce_to_mean_controller(demo_library):
    pred = fit(demo_library)
    flat = dataclasses.replace(pred, S=np.zeros_like(pred.S), Sigma_f=np.zeros_like(pred.Sigma_f),
                               Sigma_f_chol=np.zeros_like(pred.Sigma_f_chol))
    rng = np.random.default_rng(4)
    u_ini, y_ini = rng.standard_normal(8), 5 + rng.standard_normal(8)
    obj = ControlObjective()
    for fast in (True, False):
        gen = solve_u(build_sspc_gen(flat, u_ini, y_ini, obj, 7, RngStream(5), fast=fast), 10)
        np.testing.assert_allclose(gen, solve_u(build_spc(pred, u_ini, y_ini, obj), 10), atol=1e-5)


def test_generative_scenarios_follow_the_predictor(demo_library):
    pred = fit(demo_library)
    u_ini, y_ini = np.zeros(8), np.ones(8)
    obj = ControlObjective()
    qp = build_sspc_gen(pred, u_ini, y_ini, obj, 4, RngStream(6), fast=False)
    offsets = obj.upper(1, 10) - qp.ub[:40].reshape(4, 10)
    xi = RngStream(6).standard_normal((4, pred.N))
    np.testing.assert_allclose(offsets, pred.past_coef @ np.r_[u_ini, y_ini] + xi @ pred.S.T, atol=1e-10)


def test_mean_controller_unconstrained_closed_form(demo_library):
    pred = fit(demo_library)
    rng = np.random.default_rng(7)
    u_ini, y_ini = rng.standard_normal(8), rng.standard_normal(8)
    Hu, base = pred.input_coef, pred.past_coef @ np.r_[u_ini, y_ini]
    ref = FREE.ref(1, 10)
    expected = -np.linalg.solve(FREE.w_y * Hu.T @ Hu + FREE.w_u * np.eye(10), FREE.w_y * Hu.T @ (base - ref))
    np.testing.assert_allclose(solve_u(build_spc(pred, u_ini, y_ini, FREE), 10), expected, atol=1e-5)


def test_zero_input_when_free_response_hits_reference():
    integrator = StateSpaceModel([[1.0]], [[1.0]], [[1.0]], [[0.0]], [[1.0]])
    qp = build_kf_dmpc(integrator, KfState(np.array([10.0]), np.zeros((1, 1))), ControlObjective(), 5)
    np.testing.assert_allclose(solve(qp).x[:5], 0, atol=1e-7)


def test_model_mean_controller_matches_hard_constrained_oracle():
    rng = np.random.default_rng(8)
    model = StateSpaceModel([[0.9, 0.2], [0.0, 0.7]], [[0.0], [1.0]], [[1.0, 0.0]], np.zeros((2, 2)),
                            np.zeros((1, 1)))
    T, obj = 4, ControlObjective(y_ref=10.0, w_u=0.01, y_upper=9.0)
    x = rng.standard_normal(2)
    mats = predictor_matrices(model, T)
    free = mats.O_f @ x
    oracle = QpProblem(2 * (obj.w_y * mats.H_f.T @ mats.H_f + obj.w_u * np.eye(T)),
                       2 * obj.w_y * mats.H_f.T @ (free - obj.ref(1, T)),
                       A_in=mats.H_f[1:], lb=np.full(T - 1, -np.inf), ub=obj.upper(1, T)[1:] - free[1:])
    ref_u = enumerate_active_sets(oracle)
    # the first output cannot be moved by u_f, so it only needs to respect the bound already
    assert free[0] <= obj.y_upper
    got = solve(build_kf_dmpc(model, KfState(x, np.zeros((2, 2))), obj, T)).x[:T]
    np.testing.assert_allclose(got, ref_u, atol=1e-3)


@given(factor=st.sampled_from([0.01, 0.5, 20.0]))
def test_objective_scaling_leaves_inputs_unchanged(demo_library, factor):
    pred = fit(demo_library)
    u_ini, y_ini = np.zeros(8), np.full(8, 9.0)
    obj = ControlObjective()
    a = solve_u(build_spc(pred, u_ini, y_ini, obj), 10)
    b = solve_u(build_spc(pred, u_ini, y_ini, obj.scaled(factor)), 10)
    np.testing.assert_allclose(a, b, atol=1e-4 * max(1.0, np.abs(a).max()))


def test_deepc_recovers_noise_free_prediction(demo, noise_free_library):
    lib, pred = noise_free_library
    rng = np.random.default_rng(9)
    u_ini, y_ini, x_end = consistent_past(demo.model, rng)
    qp = build_deepc(lib, u_ini, y_ini, FREE, gamma_y=1e6, gamma_z=10.0)
    sol = solve(qp, max_iter=100000)
    u, g = sol.x[qp.labels["u"]], sol.x[qp.labels["g"]]
    mats = predictor_matrices(demo.model, 10)
    truth = mats.O_f @ x_end + mats.H_f @ u
    np.testing.assert_allclose(lib.Yf @ g, truth, atol=2e-3 * np.abs(truth).max())
    np.testing.assert_allclose(u, solve_u(build_spc(pred, u_ini, y_ini, FREE), 10),
                               atol=2e-3 * max(1.0, np.abs(u).max()))


def test_likelihood_variant_closed_form(demo_library):
    pred = fit(demo_library)
    rng = np.random.default_rng(10)
    u_ini, y_ini = rng.standard_normal(8), rng.standard_normal(8)
    Hu, e0 = pred.input_coef, pred.past_coef @ np.r_[u_ini, y_ini] - FREE.ref(1, 10)
    Gi = inverse_scatter(pred)
    for gamma in (0.1, 10.0):
        W = FREE.w_y * np.eye(10) - FREE.w_y**2 * np.linalg.inv(FREE.w_y * np.eye(10) + gamma * Gi)
        expected = -np.linalg.solve(Hu.T @ W @ Hu + FREE.w_u * np.eye(10), Hu.T @ W @ e0)
        got = solve_u(build_deepc_variant(pred, u_ini, y_ini, FREE, gamma), 10)
        np.testing.assert_allclose(got, expected, atol=1e-4 * max(1.0, np.abs(expected).max()))
    stiff = solve_u(build_deepc_variant(pred, u_ini, y_ini, FREE, 1e9), 10)
    np.testing.assert_allclose(stiff, solve_u(build_spc(pred, u_ini, y_ini, FREE), 10), atol=1e-4)


def test_singular_scatter_is_rejected(noise_free_library):
    _, pred = noise_free_library
    with pytest.raises(SingularScatterError):
        inverse_scatter(pred)
    with pytest.raises(SingularScatterError):
        PredictiveController(ControllerSpec("deepc_variant"), ControlObjective(), 1, 1, pred=pred)


def test_controller_construction_checks(demo_library):
    pred = fit(demo_library)
    obj = ControlObjective()
    with pytest.raises(ValueError):
        ControllerSpec("mystery")
    with pytest.raises(ValueError):
        ControllerSpec("spc", M=0)
    with pytest.raises(ValueError):
        PredictiveController(ControllerSpec("kf_dmpc"), obj, 1, 1)
    with pytest.raises(ValueError):
        PredictiveController(ControllerSpec("spc"), obj, 1, 1)
    with pytest.raises(ValueError):
        PredictiveController(ControllerSpec("deepc"), obj, 1, 1)
    with pytest.raises(ValueError):
        PredictiveController(ControllerSpec("spc", T_ini=4), obj, 1, 1, pred=pred)
    with pytest.raises(ValueError):
        ControlObjective(w_u=-1.0)
    assert ControllerSpec("spc", N=100).label == "spc_N100"


class RecordingController(PredictiveController):
    def build(self, u_ini, y_ini, rng):
        self.seen.append((u_ini.copy(), y_ini.copy()))
        return super().build(u_ini, y_ini, rng)

    def reset(self):
        super().reset()
        self.seen = []


def test_past_window_bookkeeping(demo, demo_library):
    ctrl = RecordingController(ControllerSpec("spc"), ControlObjective(), 1, 1, pred=fit(demo_library))
    res = run_closed_loop(demo.model, ctrl, ControlObjective(), 30, RngStream(11))
    assert len(ctrl.seen) == 22 and res.solve_ms.size == 22
    U, Y = res.trajectory.u, res.trajectory.y
    for k, (u_ini, y_ini) in enumerate(ctrl.seen):
        t = 8 + k
        np.testing.assert_array_equal(u_ini, U[t - 8:t, 0])
        np.testing.assert_array_equal(y_ini, Y[t - 8:t, 0])
    np.testing.assert_array_equal(U[:8], 0)
    cost = sum(ControlObjective().stage_cost(Y[t], U[t]) for t in range(8, 30))
    assert res.realized_cost == pytest.approx(cost)
    assert res.n_violations == int((Y[:, 0] > 12.0).sum())


def test_run_of_only_the_initial_window(demo, demo_library):
    ctrl = PredictiveController(ControllerSpec("spc"), ControlObjective(), 1, 1, pred=fit(demo_library))
    res = run_closed_loop(demo.model, ctrl, ControlObjective(), 8, RngStream(12))
    assert res.solve_ms.size == 0 and res.realized_cost == 0.0
    np.testing.assert_array_equal(res.trajectory.u, 0)
    with pytest.raises(ValueError):
        run_closed_loop(demo.model, ctrl, ControlObjective(), 0, RngStream(12))


def test_noise_free_data_driven_matches_model_based(demo, noise_free_library):
    _, pred = noise_free_library
    plant = demo.model.noise_free()
    obj = ControlObjective()
    off = NoiseModel(process=0.0, measurement=0.0)
    spc = run_closed_loop(plant, PredictiveController(ControllerSpec("spc"), obj, 1, 1, pred=pred), obj, 60,
                          RngStream(13), off)
    kf = run_closed_loop(plant, PredictiveController(ControllerSpec("kf_dmpc"), obj, 1, 1, model=plant), obj,
                         60, RngStream(13), off)
    assert spc.realized_cost == pytest.approx(kf.realized_cost, rel=0.01)
    assert not spc.violated and not kf.violated


def test_divergence_is_reported():
    plant = StateSpaceModel([[2.0]], [[1.0]], [[1.0]], [[0.0]], [[0.0]])
    # the controller's model believes the input has no effect, so it never acts
    blind = StateSpaceModel([[2.0]], [[0.0]], [[1.0]], [[0.0]], [[0.0]])
    ctrl = PredictiveController(ControllerSpec("kf_dmpc", T_ini=1, T=3), ControlObjective(), 1, 1, model=blind)
    res = run_closed_loop(plant, ctrl, ControlObjective(), 200, RngStream(14), NoiseModel.off(), x0=[1.0])
    assert res.diverged and res.violated and "diverged" in res.failed_reason
    assert len(res.trajectory) < 200
