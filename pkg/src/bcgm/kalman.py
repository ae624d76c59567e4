"""Kalman-filter reference posteriors for the future output window.

The ordering of the conditioning vector is always
``z = col(u_1..u_Tini, y_1..y_Tini, u_{Tini+1}..u_{Tini+T})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lti import NoiseModel, StabilizingController, StateSpaceModel, stationary_state_covariance
from .numerics import pinv, symmetrize


@dataclass(frozen=True)
class KfState:
    """Predicted (prior) state mean and covariance."""

    x_hat_minus: np.ndarray
    P_minus: np.ndarray


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class InitialTrajectory:
    """Past window and planned future inputs, each flattened time-major."""

    u_ini: np.ndarray
    y_ini: np.ndarray
    u_f: np.ndarray

    def __post_init__(self):
        for name in ("u_ini", "y_ini", "u_f"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u_ini, self.y_ini, self.u_f])


@dataclass(frozen=True)
class PredictorMatrices:
    """Stacked maps with ``y_f = O_f x + H_f u_f + G_f w_f + v_f``."""

    O_f: np.ndarray
    G_f: np.ndarray
    H_f: np.ndarray
    Q_f: np.ndarray
    R_f: np.ndarray

    @property
    def noise_cov(self) -> np.ndarray:
        """Covariance contributed by the future process and measurement noise."""
        return self.G_f @ self.Q_f @ self.G_f.T + self.R_f


@dataclass(frozen=True)
class EtaMap:
    """Affine map from the window and the prior mean to the posterior of ``y_f``.

    Attributes:
        eta_f: coefficient of ``z``.
        psi_term: coefficient of the prior mean.
        P_pred: predicted state covariance after the past window.
        theta: state-estimate coefficient of ``col(u_ini, y_ini)``.
        psi: state-estimate coefficient of the prior mean.
    """

    eta_f: np.ndarray
    psi_term: np.ndarray
    P_pred: np.ndarray
    theta: np.ndarray
    psi: np.ndarray


def kalman_gain(model: StateSpaceModel, P_minus) -> np.ndarray:
    innov = model.C @ P_minus @ model.C.T + model.R
    return P_minus @ model.C.T @ pinv(symmetrize(innov))


def measurement_update(model: StateSpaceModel, P_minus):
    """Gain and Joseph-form posterior covariance."""
    K = kalman_gain(model, P_minus)
    I_KC = np.eye(model.n) - K @ model.C
    P = I_KC @ P_minus @ I_KC.T + K @ model.R @ K.T
    return K, symmetrize(P)


def time_update_cov(model: StateSpaceModel, P) -> np.ndarray:
    return symmetrize(model.A @ P @ model.A.T + model.Q)


def kf_step(model: StateSpaceModel, state: KfState, u, y) -> KfState:
    """Measurement update with ``y`` followed by the time update with ``u``."""
    x = np.asarray(state.x_hat_minus, dtype=float).reshape(model.n)
    K, P = measurement_update(model, np.asarray(state.P_minus, dtype=float))
    x_hat = x + K @ (np.asarray(y, dtype=float).reshape(model.p) - model.C @ x)
    x_next = model.A @ x_hat + model.B @ np.asarray(u, dtype=float).reshape(model.m)
    return KfState(x_next, time_update_cov(model, P))


def predictor_matrices(model: StateSpaceModel, T: int) -> PredictorMatrices:
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n, m, p = model.n, model.m, model.p
    powers = [np.eye(n)]
    for _ in range(T):
        powers.append(model.A @ powers[-1])
    O_f = np.vstack([model.C @ powers[t] for t in range(T)])
    G_f = np.zeros((p * T, n * T))
    for i in range(T):
        for j in range(i):
            G_f[i * p:(i + 1) * p, j * n:(j + 1) * n] = model.C @ powers[i - j - 1]
    H_f = G_f @ np.kron(np.eye(T), model.B)
    return PredictorMatrices(O_f, G_f, H_f, np.kron(np.eye(T), model.Q), np.kron(np.eye(T), model.R))


def eta_map(model: StateSpaceModel, P, T_ini: int, T: int) -> EtaMap:
    """Propagate the filter with the state estimate kept as a linear map.

    The prior mean ``x_hat_1^- = mu`` is represented by coefficient columns so
    that after ``T_ini`` updates ``x_hat^- = theta col(u_ini, y_ini) + psi mu``.
    """
    n, m, p = model.n, model.m, model.p
    n_ini = T_ini * (m + p)
    coef = np.zeros((n, n_ini + n))
    coef[:, n_ini:] = np.eye(n)
    P_minus = symmetrize(np.asarray(P, dtype=float))
    for t in range(T_ini):
        K, P_post = measurement_update(model, P_minus)
        coef = coef - K @ (model.C @ coef)
        coef[:, T_ini * m + t * p:T_ini * m + (t + 1) * p] += K
        coef = model.A @ coef
        coef[:, t * m:(t + 1) * m] += model.B
        P_minus = time_update_cov(model, P_post)
    theta, psi = coef[:, :n_ini], coef[:, n_ini:]
    mats = predictor_matrices(model, T)
    eta_f = np.hstack([mats.O_f @ theta, mats.H_f])
    return EtaMap(eta_f, mats.O_f @ psi, P_minus, theta, psi)


def output_covariance(model: StateSpaceModel, P, T_ini: int, T: int) -> np.ndarray:
    """Posterior covariance of ``y_f`` for a filter initialized with covariance ``P``."""
    emap = eta_map(model, P, T_ini, T)
    mats = predictor_matrices(model, T)
    return symmetrize(mats.O_f @ emap.P_pred @ mats.O_f.T + mats.noise_cov)


def posterior_yf(model: StateSpaceModel, init: KfState, z: InitialTrajectory) -> GaussianBelief:
    """Run the filter over the past window, then roll the prediction forward."""
    m, p = model.m, model.p
    T_ini = z.u_ini.size // m
    if z.y_ini.size != T_ini * p or z.u_f.size % m:
        raise ValueError("initial trajectory lengths are inconsistent with the model")
    T = z.u_f.size // m
    state = KfState(np.asarray(init.x_hat_minus, dtype=float), np.asarray(init.P_minus, dtype=float))
    for t in range(T_ini):
        state = kf_step(model, state, z.u_ini[t * m:(t + 1) * m], z.y_ini[t * p:(t + 1) * p])
    mats = predictor_matrices(model, T)
    mean = mats.O_f @ state.x_hat_minus + mats.H_f @ z.u_f
    cov = mats.O_f @ state.P_minus @ mats.O_f.T + mats.noise_cov
    return GaussianBelief(mean, symmetrize(cov))


def multi_mode_target_covariance(initial_cov, Sigma_phi, cross_cov=None) -> np.ndarray:
    """Initial-state covariance left after conditioning on the controller state."""
    initial_cov = np.atleast_2d(np.asarray(initial_cov, dtype=float))
    if cross_cov is None:
        return initial_cov.copy()
    cross = np.atleast_2d(np.asarray(cross_cov, dtype=float))
    return symmetrize(initial_cov - cross @ pinv(Sigma_phi) @ cross.T)


def single_mode_target_covariance(model: StateSpaceModel, ctrl: StabilizingController,
                                  noise: NoiseModel | None = None) -> np.ndarray:
    """Stationary state covariance conditioned on the controller state."""
    S = stationary_state_covariance(model, ctrl, noise)
    n = model.n
    Sxx, Sxp, Spp = S[:n, :n], S[:n, n:], S[n:, n:]
    return symmetrize(Sxx - Sxp @ pinv(Spp) @ Sxp.T)


def scaled_model(model: StateSpaceModel, noise: NoiseModel | None) -> StateSpaceModel:
    """Model whose Q and R carry the noise-model multipliers."""
    if noise is None:
        return model
    return model.with_noise(noise.process * model.Q, noise.measurement * model.R)
