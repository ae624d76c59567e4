"""Dense linear-algebra kernels and seeded random streams.

Everything else in the package goes through :func:`pinv`, :func:`numerical_rank`
and :func:`chol_psd` so that rank decisions are made with one rule.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

logger = logging.getLogger(__name__)

#: Relative singular-value cutoff shared by ``pinv`` and ``numerical_rank``.
EPS_REL = 1e-12
#: Negative eigenvalues down to ``-PSD_CLAMP * ||S||_2`` are clamped to zero.
PSD_CLAMP = 1e-10

RNG_ALGORITHM = "philox4x64-10"


class NumericalError(RuntimeError):
    """A dense kernel failed (e.g. SVD did not converge)."""


class NotPSDError(NumericalError):
    """Matrix has an eigenvalue below the PSD clamping window."""


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains NaN or Inf")
    return M


def truncated_svd(M: np.ndarray, eps_rel: float = EPS_REL):
    """Thin SVD with singular values below the rank cutoff removed.

    The cutoff is ``eps_rel * s_max * max(rows, cols)``.

    Returns:
        (U, s, Vt) with ``len(s)`` equal to the numerical rank.
    """
    M = np.asarray(M, dtype=float)
    rows, cols = M.shape
    if rows == 0 or cols == 0:
        return np.zeros((rows, 0)), np.zeros(0), np.zeros((0, cols))
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    cutoff = eps_rel * (s[0] if s.size else 0.0) * max(rows, cols)
    keep = s > cutoff
    return U[:, keep], s[keep], Vt[keep]


def pinv(M, eps_rel: float = EPS_REL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via a truncated SVD."""
    M = as_matrix(M)
    U, s, Vt = truncated_svd(M, eps_rel)
    return (Vt.T / s) @ U.T


def numerical_rank(M, eps_rel: float = EPS_REL) -> int:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    return int(truncated_svd(M, eps_rel)[1].size)


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def clamp_psd(S, name: str = "matrix") -> tuple[np.ndarray, np.ndarray, float]:
    """Eigen-decompose a symmetric matrix and clamp tiny negative eigenvalues.

    Returns:
        (eigenvalues, eigenvectors, clamped_magnitude)

    Raises:
        NotPSDError: if an eigenvalue is below ``-PSD_CLAMP * ||S||_2``.
    """
    S = as_matrix(S, name)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got {S.shape}")
    scale = np.max(np.abs(S)) if S.size else 0.0
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-9 * max(scale, 1.0)):
        raise ValueError(f"{name} is not symmetric")
    S = symmetrize(S)
    lam, V = np.linalg.eigh(S)
    norm2 = np.max(np.abs(lam)) if lam.size else 0.0
    if lam.size and lam[0] < -PSD_CLAMP * norm2:
        raise NotPSDError(f"{name} is indefinite: min eigenvalue {lam[0]:.3e}, norm {norm2:.3e}")
    clamped = float(-lam[0]) if lam.size and lam[0] < 0 else 0.0
    return np.clip(lam, 0.0, None), V, clamped


def chol_psd(S) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T == S`` for a PSD matrix.

    Singular PSD input is allowed. The factor is built from the clamped
    eigen-decomposition and re-triangularized with a QR step, so the result is
    lower triangular with a non-negative diagonal, like a Cholesky factor.
    """
    lam, V, clamped = clamp_psd(S)
    if clamped > 0.0:
        logger.debug("chol_psd clamped negative eigenvalue of magnitude %.3e", clamped)
    n = lam.size
    if n == 0:
        return np.zeros((0, 0))
    F = V * np.sqrt(lam)
    R = np.linalg.qr(F.T, mode="r")
    L = R.T
    signs = np.where(np.diag(L) < 0, -1.0, 1.0)
    return L * signs


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's Philox generator with the 128-bit key set to the pair,
    so equal pairs reproduce the same sequence and distinct pairs are
    independent streams without any shared state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, *labels) -> "RngStream":
        """Child stream whose id is a hash of this stream id and ``labels``."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *labels))

    def standard_normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def standardized(self, size, kind: str = "gaussian") -> np.ndarray:
        """Zero-mean, unit-variance i.i.d. draws of the given distribution kind."""
        if kind == "gaussian":
            return self.generator.standard_normal(size)
        if kind == "uniform":
            a = np.sqrt(3.0)
            return self.generator.uniform(-a, a, size)
        if kind == "laplace":
            return self.generator.laplace(0.0, 1.0 / np.sqrt(2.0), size)
        raise ValueError(f"unknown noise kind {kind!r}")


def derive_stream_id(*parts) -> int:
    """Stable 64-bit id from arbitrary printable parts (blake2b)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def gaussian(rng: RngStream, mean, factor) -> np.ndarray:
    """Draw ``mean + factor @ xi`` with ``xi`` standard normal."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    factor = np.atleast_2d(np.asarray(factor, dtype=float))
    if factor.shape[0] != mean.size:
        raise ValueError(f"factor has {factor.shape[0]} rows, mean has length {mean.size}")
    xi = rng.standard_normal(factor.shape[1])
    return mean + factor @ xi
