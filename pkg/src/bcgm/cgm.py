"""Conditional generative model over future outputs built from a trajectory library.

Offline, the library is reduced to a mean coefficient ``Theta_f`` and a
null-space factor ``S = Y_f (I - Xi^+ Xi) / sqrt(N)``. Online, a sample is
``Theta_f z + S xi`` with ``xi ~ N(0, I_N)``, so the conditional covariance
is ``Sigma_f = S S^T``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kalman import GaussianBelief, InitialTrajectory
from .library import TrajectoryLibrary
from .numerics import NumericalError, RngStream, chol_psd, clamp_psd, symmetrize, truncated_svd

logger = logging.getLogger(__name__)


class RankDeficientWarning(UserWarning):
    """Stacked data matrix is numerically rank deficient."""


class LikelihoodError(NumericalError):
    """Conditional covariance is singular, so the density is undefined."""


@dataclass(frozen=True)
class CgmPredictor:
    """Offline quantities of the generative model.

    Attributes:
        Theta_f: (p*T, T_ini*(m+p) + T*m) coefficient of ``z``.
        S: (p*T, N) stochastic factor, or ``None`` if it was dropped to save memory.
        Sigma_f: conditional covariance ``S S^T``.
        Sigma_f_chol: lower-triangular factor of ``Sigma_f``.
        xi_rank: numerical rank of the stacked data matrix at fit time.
        data_scale: mean squared future output of the library, the reference
            against which a vanishing ``Sigma_f`` is judged singular.
    """

    Theta_f: np.ndarray
    S: np.ndarray | None
    Sigma_f: np.ndarray
    Sigma_f_chol: np.ndarray
    T_ini: int
    T: int
    m: int
    p: int
    N: int
    xi_rank: int = 0
    xi_rows: int = 0
    data_scale: float = 0.0

    @property
    def z_dim(self) -> int:
        return self.T_ini * (self.m + self.p) + self.T * self.m

    @property
    def past_coef(self) -> np.ndarray:
        """Columns of ``Theta_f`` acting on ``col(u_ini, y_ini)``."""
        return self.Theta_f[:, :self.T_ini * (self.m + self.p)]

    @property
    def input_coef(self) -> np.ndarray:
        """Columns of ``Theta_f`` acting on ``u_f``."""
        return self.Theta_f[:, self.T_ini * (self.m + self.p):]

    def without_factor(self) -> "CgmPredictor":
        return CgmPredictor(self.Theta_f, None, self.Sigma_f, self.Sigma_f_chol, self.T_ini,
                            self.T, self.m, self.p, self.N, self.xi_rank, self.xi_rows, self.data_scale)


def _z_vector(pred: CgmPredictor, z) -> np.ndarray:
    vec = z.vector() if isinstance(z, InitialTrajectory) else np.asarray(z, dtype=float).reshape(-1)
    if vec.size != pred.z_dim:
        raise ValueError(f"conditioning vector has length {vec.size}, expected {pred.z_dim}")
    return vec


def null_space_factor(lib: TrajectoryLibrary):
    """Return ``(Y_f Xi^+, Y_f (I - Xi^+ Xi), rank)`` without forming an N x N matrix.

    A residual whose norm is below the rounding floor of the projection is
    returned as exact zeros, so noise-free data gives a zero covariance.
    """
    Xi = lib.Xi
    U, s, Vt = truncated_svd(Xi)
    YV = lib.Yf @ Vt.T
    coef = (YV / s) @ U.T
    resid = lib.Yf - YV @ Vt
    floor = np.finfo(float).eps * max(Xi.shape) * np.linalg.norm(lib.Yf)
    if np.linalg.norm(resid) <= floor:
        resid = np.zeros_like(resid)
    return coef, resid, int(s.size)


def fit(lib: TrajectoryLibrary, keep_factor: bool = True) -> CgmPredictor:
    """Precompute the mean coefficient and the conditional covariance."""
    coef, resid, rank = null_space_factor(lib)
    rows = lib.Xi.shape[0]
    if rank < rows:
        warnings.warn(f"stacked data matrix has rank {rank} < {rows}; using truncated pseudo-inverse",
                      RankDeficientWarning, stacklevel=2)
    n_phi = rows - lib.Z.shape[0]
    Theta_f = coef[:, n_phi:]
    S = resid / np.sqrt(lib.N)
    Sigma_f = symmetrize(S @ S.T)
    _, _, clamped = clamp_psd(Sigma_f, "Sigma_f")
    if clamped:
        logger.info("Sigma_f clamped by %.3e before factorization", clamped)
    return CgmPredictor(
        Theta_f=Theta_f,
        S=S if keep_factor else None,
        Sigma_f=Sigma_f,
        Sigma_f_chol=chol_psd(Sigma_f),
        T_ini=lib.T_ini,
        T=lib.T,
        m=lib.m,
        p=lib.p,
        N=lib.N,
        xi_rank=rank,
        xi_rows=rows,
        data_scale=float(np.sum(lib.Yf**2) / lib.Yf.size) if lib.Yf.size else 0.0,
    )


def predict_mean(pred: CgmPredictor, z) -> np.ndarray:
    """Online mean: one matrix-vector product, independent of ``N``."""
    return pred.Theta_f @ _z_vector(pred, z)


def conditional(pred: CgmPredictor, z) -> GaussianBelief:
    return GaussianBelief(predict_mean(pred, z), pred.Sigma_f.copy())


def sample(pred: CgmPredictor, z, rng: RngStream, count: int = 1, fast: bool = False) -> np.ndarray:
    """Draw ``count`` future-output samples, one per row.

    By default each sample is ``mean + S xi`` with ``xi ~ N(0, I_N)``. With
    ``fast=True`` the equivalent ``mean + chol(Sigma_f) zeta`` is used, whose
    cost does not depend on ``N``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    mean = predict_mean(pred, z)
    if fast or pred.S is None:
        F = pred.Sigma_f_chol
    else:
        F = pred.S
    xi = rng.standard_normal((count, F.shape[1]))
    return mean + xi @ F.T


def log_likelihood(pred: CgmPredictor, z, y_f) -> float:
    """Gaussian log-density of ``y_f`` under the conditional distribution.

    Raises:
        LikelihoodError: if ``Sigma_f`` is singular.
    """
    y_f = np.asarray(y_f, dtype=float).reshape(-1)
    r = y_f - predict_mean(pred, z)
    return gaussian_log_density(r, pred.Sigma_f, pred.data_scale)


def gaussian_log_density(r, cov, scale: float = 0.0) -> float:
    """Zero-mean Gaussian log-density of residual ``r``.

    ``cov`` counts as singular when its smallest eigenvalue is below
    ``1e-14`` times the larger of its largest eigenvalue and ``scale``.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    lam, _, _ = clamp_psd(cov, "covariance")
    if lam.size and lam[0] <= 1e-14 * max(lam[-1], scale, 1e-300):
        raise LikelihoodError("conditional covariance is singular; add data or noise to repair the rank")
    try:
        c, lower = cho_factor(symmetrize(np.asarray(cov, dtype=float)), lower=True)
    except np.linalg.LinAlgError as exc:
        raise LikelihoodError(f"conditional covariance is not positive definite: {exc}") from exc
    quad = float(r @ cho_solve((c, lower), r))
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return -0.5 * quad - 0.5 * r.size * np.log(2 * np.pi) - 0.5 * logdet


def null_space_log_likelihood(pred: CgmPredictor, beta) -> float:
    """Log-likelihood written in terms of a null-space coefficient ``beta`` (length N).

    The residual is ``Y_f (I - Xi^+ Xi) beta = sqrt(N) S beta`` and the scatter
    matrix is ``Gamma = N Sigma_f``.
    """
    if pred.S is None:
        raise ValueError("predictor was fitted without its stochastic factor")
    N = pred.N
    resid = np.sqrt(N) * pred.S @ np.asarray(beta, dtype=float).reshape(N)
    Gamma = N * pred.Sigma_f
    c = cho_factor(Gamma, lower=True)
    quad = float(resid @ cho_solve(c, resid))
    _, logdet = np.linalg.slogdet(Gamma / N)
    return -0.5 * N * quad - 0.5 * resid.size * np.log(2 * np.pi) - 0.5 * logdet


def alpha_from_beta(lib: TrajectoryLibrary, z, beta) -> np.ndarray:
    """Library combination vector: min-norm solution plus projected ``beta``."""
    Xi = lib.Xi
    U, s, Vt = truncated_svd(Xi)
    n_phi = Xi.shape[0] - lib.Z.shape[0]
    rhs = np.concatenate([np.zeros(n_phi), np.asarray(z, dtype=float).reshape(-1)])
    beta = np.asarray(beta, dtype=float).reshape(-1)
    return Vt.T @ ((U.T @ rhs) / s) + beta - Vt.T @ (Vt @ beta)
