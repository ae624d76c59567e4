"""Stochastic LTI plant, data-collection controller and trajectory simulation.

The plant is

    x[t+1] = A x[t] + B u[t] + w[t],    y[t] = C x[t] + v[t]

and offline data is collected under a dynamic output-feedback controller

    phi[t+1] = A_ctrl phi[t] + B_ctrl y[t],    u[t] = C_ctrl phi[t] + nu[t].

Trajectories are stored as ``(length, dim)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, as_matrix, chol_psd, clamp_psd

DIVERGENCE_NORM = 1e8
NOISE_KINDS = ("gaussian", "uniform", "laplace")


class DivergenceError(RuntimeError):
    """Simulated state norm exceeded the divergence threshold."""


class UnstableLoopError(ValueError):
    """Plant plus data-collection controller is not asymptotically stable."""


def _frozen_set(obj, name, value):
    object.__setattr__(obj, name, value)


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class StateSpaceModel:
    """Plant matrices and noise covariances.

    Attributes:
        A, B, C: state-space matrices with shapes (n, n), (n, m), (p, n).
        Q: process-noise covariance, symmetric PSD.
        R: measurement-noise covariance, symmetric positive definite. Zero is
            accepted so that noise-free plants can be expressed directly.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(n, -1) if B.ndim < 2 else as_matrix(B, "B")
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(-1, n) if C.ndim < 2 else as_matrix(C, "C")
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        if Q.shape != (n, n) or R.shape != (C.shape[0],) * 2:
            raise ValueError(f"noise covariances have shapes Q{Q.shape} R{R.shape}")
        clamp_psd(Q, "Q")
        clamp_psd(R, "R")
        for name, value in zip("ABCQR", (A, B, C, Q, R)):
            value = value.copy()
            value.setflags(write=False)
            _frozen_set(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def with_noise(self, Q=None, R=None) -> "StateSpaceModel":
        return StateSpaceModel(self.A, self.B, self.C,
                               self.Q if Q is None else Q, self.R if R is None else R)

    def noise_free(self) -> "StateSpaceModel":
        return self.with_noise(np.zeros_like(self.Q), np.zeros_like(self.R))

    def markov_parameters(self, count: int) -> list[np.ndarray]:
        """Impulse-response blocks ``C A^k B`` for ``k = 0 .. count-1``."""
        out, Ak = [], np.eye(self.n)
        for _ in range(count):
            out.append(self.C @ Ak @ self.B)
            Ak = self.A @ Ak
        return out


@dataclass(frozen=True)
class StabilizingController:
    """Dynamic output-feedback controller with Gaussian excitation ``nu``.

    ``Sigma_phi`` is the covariance of the initial controller state. A zero
    ``Sigma_phi`` is allowed; it is what the white-noise controller uses.
    """

    A_ctrl: np.ndarray
    B_ctrl: np.ndarray
    C_ctrl: np.ndarray
    R_ctrl: np.ndarray
    Sigma_phi: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A_ctrl, "A_ctrl")
        B = as_matrix(self.B_ctrl, "B_ctrl")
        C = as_matrix(self.C_ctrl, "C_ctrl")
        R = as_matrix(self.R_ctrl, "R_ctrl")
        S = as_matrix(self.Sigma_phi, "Sigma_phi")
        k = A.shape[0]
        if A.shape != (k, k) or B.shape[0] != k or C.shape[1] != k or S.shape != (k, k):
            raise ValueError("inconsistent controller shapes")
        if R.shape != (C.shape[0],) * 2:
            raise ValueError(f"R_ctrl has shape {R.shape}, expected {(C.shape[0],) * 2}")
        lam, _, _ = clamp_psd(R, "R_ctrl")
        if lam.size and lam[0] <= 0:
            raise ValueError("R_ctrl must be positive definite")
        clamp_psd(S, "Sigma_phi")
        for name, value in zip(("A_ctrl", "B_ctrl", "C_ctrl", "R_ctrl", "Sigma_phi"), (A, B, C, R, S)):
            value = value.copy()
            value.setflags(write=False)
            _frozen_set(self, name, value)

    @property
    def n_ctrl(self) -> int:
        return self.A_ctrl.shape[0]

    @property
    def m(self) -> int:
        return self.C_ctrl.shape[0]

    @property
    def p(self) -> int:
        return self.B_ctrl.shape[1]

    @classmethod
    def white_noise(cls, m: int, p: int, variance: float = 1.0) -> "StabilizingController":
        """Open-loop i.i.d. excitation ``u = nu``; the controller state stays zero."""
        return cls(np.zeros((1, 1)), np.zeros((1, p)), np.zeros((m, 1)),
                   variance * np.eye(m), np.zeros((1, 1)))

    @classmethod
    def observer_based(cls, model: StateSpaceModel, K, L, variance: float = 1.0,
                       sigma_phi: float = 1.0) -> "StabilizingController":
        """Observer plus state feedback: ``phi+ = (A - BK - LC) phi + L y``, ``u = -K phi + nu``."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        L = np.asarray(L, dtype=float).reshape(model.n, model.p)
        A_ctrl = model.A - model.B @ K - L @ model.C
        return cls(A_ctrl, L, -K, variance * np.eye(model.m), sigma_phi * np.eye(model.n))


def closed_loop_matrix(model: StateSpaceModel, ctrl: StabilizingController) -> np.ndarray:
    """State matrix of the interconnection acting on ``col(x, phi)``."""
    if ctrl.m != model.m or ctrl.p != model.p:
        raise ValueError("controller and plant dimensions do not match")
    return np.block([[model.A, model.B @ ctrl.C_ctrl],
                     [ctrl.B_ctrl @ model.C, ctrl.A_ctrl]])


def check_closed_loop(model: StateSpaceModel, ctrl: StabilizingController) -> float:
    rho = spectral_radius(closed_loop_matrix(model, ctrl))
    if rho >= 1.0:
        raise UnstableLoopError(f"closed-loop spectral radius {rho:.4f} >= 1")
    return rho


@dataclass(frozen=True)
class NoiseModel:
    """Noise distribution family plus covariance multipliers.

    Every draw is ``chol(scale * Cov) @ xi`` where ``xi`` has i.i.d. zero-mean,
    unit-variance entries of the given kind, so second moments always match the
    declared covariances. Uniform entries live on ``[-sqrt(3), sqrt(3)]``.
    """

    kind: str = "gaussian"
    process: float = 1.0
    measurement: float = 1.0
    excitation: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        for name in ("process", "measurement", "excitation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} scale must be non-negative")

    @classmethod
    def off(cls) -> "NoiseModel":
        return cls("gaussian", 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Trajectory:
    """Recorded signals, one row per time step. ``x`` is ground truth for diagnostics."""

    u: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        lengths = {len(self.u), len(self.y), len(self.phi), len(self.x)}
        if len(lengths) != 1:
            raise ValueError(f"signals have unequal lengths {lengths}")

    def __len__(self):
        return len(self.u)


class _Factors:
    """Pre-scaled noise factors for one (model, noise) pair."""

    def __init__(self, model: StateSpaceModel, noise: NoiseModel, ctrl: StabilizingController | None = None):
        self.kind = noise.kind
        self.w = chol_psd(noise.process * model.Q)
        self.v = chol_psd(noise.measurement * model.R)
        self.nu = None if ctrl is None else chol_psd(noise.excitation * ctrl.R_ctrl)

    @staticmethod
    def draw(rng: RngStream, factor, count, kind):
        xi = rng.standardized((count, factor.shape[1]), kind)
        return xi @ factor.T


def step(model: StateSpaceModel, x, u, noise: NoiseModel, rng: RngStream):
    """One plant transition. Returns ``(x_next, y)`` with ``y`` measured at ``x``."""
    x = np.asarray(x, dtype=float).reshape(model.n)
    u = np.asarray(u, dtype=float).reshape(model.m)
    f = _Factors(model, noise)
    w = f.draw(rng, f.w, 1, f.kind)[0]
    v = f.draw(rng, f.v, 1, f.kind)[0]
    return model.A @ x + model.B @ u + w, model.C @ x + v


class PlantSimulator:
    """Stateful truth plant used inside closed-loop controller evaluation."""

    def __init__(self, model: StateSpaceModel, noise: NoiseModel, rng: RngStream, x0=None):
        self.model = model
        self.rng = rng
        self._f = _Factors(model, noise)
        self.x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n).copy()

    def measure(self) -> np.ndarray:
        v = self._f.draw(self.rng, self._f.v, 1, self._f.kind)[0]
        return self.model.C @ self.x + v

    def advance(self, u) -> None:
        w = self._f.draw(self.rng, self._f.w, 1, self._f.kind)[0]
        self.x = self.model.A @ self.x + self.model.B @ np.asarray(u, dtype=float).reshape(self.model.m) + w
        if not np.all(np.isfinite(self.x)) or np.linalg.norm(self.x) > DIVERGENCE_NORM:
            raise DivergenceError(f"state norm exceeded {DIVERGENCE_NORM:g}")


def initial_state_factor(initial_cov, Sigma_phi, cross_cov=None) -> np.ndarray:
    """Factor of the joint covariance of ``col(x_1, phi_1)``."""
    initial_cov = np.atleast_2d(np.asarray(initial_cov, dtype=float))
    Sigma_phi = np.atleast_2d(np.asarray(Sigma_phi, dtype=float))
    n, k = initial_cov.shape[0], Sigma_phi.shape[0]
    cross = np.zeros((n, k)) if cross_cov is None else np.asarray(cross_cov, dtype=float).reshape(n, k)
    joint = np.block([[initial_cov, cross], [cross.T, Sigma_phi]])
    return chol_psd(joint)


def simulate_batch(model: StateSpaceModel, ctrl: StabilizingController, noise: NoiseModel,
                   length: int, count: int, rng: RngStream, initial_cov=None, cross_cov=None,
                   check_stability: bool = True):
    """Simulate ``count`` independent closed-loop runs in lock step.

    Returns:
        dict of arrays ``u, y, phi, x`` with shapes ``(count, length, dim)``.
    """
    if length < 1 or count < 1:
        raise ValueError("length and count must be positive")
    if check_stability:
        check_closed_loop(model, ctrl)
    n, m, p, k = model.n, model.m, model.p, ctrl.n_ctrl
    initial_cov = np.zeros((n, n)) if initial_cov is None else initial_cov
    f = _Factors(model, noise, ctrl)
    F0 = initial_state_factor(initial_cov, ctrl.Sigma_phi, cross_cov)
    start = rng.standardized((count, n + k), noise.kind) @ F0.T
    W = f.draw(rng, f.w, count * length, f.kind).reshape(count, length, n)
    V = f.draw(rng, f.v, count * length, f.kind).reshape(count, length, p)
    NU = f.draw(rng, f.nu, count * length, f.kind).reshape(count, length, m)

    X = np.empty((count, length, n))
    Y = np.empty((count, length, p))
    U = np.empty((count, length, m))
    PHI = np.empty((count, length, k))
    x, phi = start[:, :n], start[:, n:]
    A, B, C = model.A, model.B, model.C
    Ac, Bc, Cc = ctrl.A_ctrl, ctrl.B_ctrl, ctrl.C_ctrl
    for t in range(length):
        y = x @ C.T + V[:, t]
        u = phi @ Cc.T + NU[:, t]
        X[:, t], Y[:, t], U[:, t], PHI[:, t] = x, y, u, phi
        x = x @ A.T + u @ B.T + W[:, t]
        phi = phi @ Ac.T + y @ Bc.T
        if np.max(np.abs(x)) > DIVERGENCE_NORM:
            raise DivergenceError(f"state norm exceeded {DIVERGENCE_NORM:g} at step {t}")
    return {"u": U, "y": Y, "phi": PHI, "x": X}


def simulate_closed_loop(model: StateSpaceModel, ctrl: StabilizingController, noise: NoiseModel,
                         length: int, rng: RngStream, initial_cov=None, cross_cov=None) -> Trajectory:
    """One data-collection run of ``length`` steps.

    ``phi_1 ~ N(0, Sigma_phi)`` and ``x_1 ~ N(0, initial_cov)``; the two are
    independent unless ``cross_cov`` (``E[x_1 phi_1^T]``) is given.
    """
    out = simulate_batch(model, ctrl, noise, length, 1, rng, initial_cov, cross_cov)
    return Trajectory(out["u"][0], out["y"][0], out["phi"][0], out["x"][0])


def simulate_many(model, ctrl, noise, length, count, rng, initial_cov=None, cross_cov=None) -> list[Trajectory]:
    out = simulate_batch(model, ctrl, noise, length, count, rng, initial_cov, cross_cov)
    return [Trajectory(out["u"][i], out["y"][i], out["phi"][i], out["x"][i]) for i in range(count)]


def simulate_open_loop(model: StateSpaceModel, x0, u_seq, noise: NoiseModel, rng: RngStream) -> Trajectory:
    """Drive the plant with a given input sequence (rows of ``u_seq``)."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    plant = PlantSimulator(model, noise, rng, x0)
    length = len(u_seq)
    X = np.empty((length, model.n))
    Y = np.empty((length, model.p))
    for t in range(length):
        X[t] = plant.x
        Y[t] = plant.measure()
        plant.advance(u_seq[t])
    return Trajectory(u_seq.copy(), Y, np.zeros((length, 0)), X)


def stationary_state_covariance(model: StateSpaceModel, ctrl: StabilizingController,
                                noise: NoiseModel | None = None) -> np.ndarray:
    """Stationary covariance of ``col(x, phi)`` under the data-collection loop."""
    from scipy.linalg import solve_discrete_lyapunov

    noise = NoiseModel() if noise is None else noise
    Acl = closed_loop_matrix(model, ctrl)
    n, k = model.n, ctrl.n_ctrl
    Wcl = np.zeros((n + k, n + k))
    Wcl[:n, :n] = noise.process * model.Q + noise.excitation * model.B @ ctrl.R_ctrl @ model.B.T
    Wcl[n:, n:] = noise.measurement * ctrl.B_ctrl @ model.R @ ctrl.B_ctrl.T
    S = solve_discrete_lyapunov(Acl, Wcl)
    return 0.5 * (S + S.T)
