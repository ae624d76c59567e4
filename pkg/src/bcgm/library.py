"""Trajectory libraries: Hankel form from one run, stacked form from many runs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .lti import Trajectory
from .numerics import truncated_svd


class LibraryWidthWarning(UserWarning):
    """Library has fewer columns than the generic full-rank width bound."""


@dataclass(frozen=True)
class TrajectoryLibrary:
    """Offline data arranged as controller states, past/future blocks and future outputs.

    Block rows are time-major: ``Up`` stacks ``u_1 .. u_Tini`` (each of size m)
    and so on. ``Phi`` may be all zeros for open-loop excitation.
    """

    Phi: np.ndarray
    Up: np.ndarray
    Yp: np.ndarray
    Uf: np.ndarray
    Yf: np.ndarray
    T_ini: int
    T: int
    source: str
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source not in ("single", "multi"):
            raise ValueError(f"source must be 'single' or 'multi', got {self.source!r}")
        widths = {np.shape(getattr(self, k))[1] for k in ("Phi", "Up", "Yp", "Uf", "Yf")}
        if len(widths) != 1:
            raise ValueError(f"blocks have unequal column counts {widths}")
        if self.Up.shape[0] % max(self.T_ini, 1) or self.Yf.shape[0] % self.T:
            raise ValueError("block heights are not multiples of the window lengths")
        if self.T_ini > 0 and self.Uf.shape[0] * self.T_ini != self.Up.shape[0] * self.T:
            raise ValueError("past and future input blocks disagree on the input dimension")

    @property
    def N(self) -> int:
        return self.Yf.shape[1]

    @property
    def m(self) -> int:
        return self.Uf.shape[0] // self.T

    @property
    def p(self) -> int:
        return self.Yf.shape[0] // self.T

    @property
    def n_ctrl(self) -> int:
        return self.Phi.shape[0]

    @property
    def Z(self) -> np.ndarray:
        return np.vstack([self.Up, self.Yp, self.Uf])

    @property
    def active_phi(self) -> np.ndarray:
        """Phi with identically-zero rows removed."""
        return self.Phi[np.any(self.Phi != 0, axis=1)]

    @property
    def Xi(self) -> np.ndarray:
        return np.vstack([self.active_phi, self.Z])

    def column(self, j: int) -> dict:
        """One column split back into per-time signals."""
        m, p = self.m, self.p
        return {
            "phi": self.Phi[:, j],
            "u": np.concatenate([self.Up[:, j], self.Uf[:, j]]).reshape(-1, m),
            "y": np.concatenate([self.Yp[:, j], self.Yf[:, j]]).reshape(-1, p),
        }


@dataclass(frozen=True)
class RankReport:
    xi_rank: int
    xi_rows: int
    smallest_kept_singular_value: float
    pe_order_satisfied: bool
    width_bound: int
    meets_width_bound: bool
    full_row_rank: bool
    state_margin: int | None = None


def hankel(seq, depth: int) -> np.ndarray:
    """Block-Hankel matrix; column ``j`` stacks ``seq[j] .. seq[j + depth - 1]``."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    length, d = seq.shape
    if depth < 1 or length < depth:
        raise ValueError(f"sequence of length {length} is too short for depth {depth}")
    cols = length - depth + 1
    windows = np.lib.stride_tricks.sliding_window_view(seq, depth, axis=0)  # (cols, d, depth)
    return np.ascontiguousarray(windows.transpose(2, 1, 0).reshape(depth * d, cols))


def width_bound(m: int, p: int, n_ctrl: int, T_ini: int, T: int, kappa_ctrl: int = 0) -> int:
    """Generic column count beyond which the stacked data matrix has full row rank."""
    r = n_ctrl + m * (T_ini + T) + p * T_ini
    return (r + 1) * (T_ini + T) + r * kappa_ctrl


def _warn_width(N, m, p, n_ctrl, T_ini, T):
    bound = width_bound(m, p, n_ctrl, T_ini, T)
    if N < bound:
        warnings.warn(f"library width {N} is below the generic full-rank bound {bound}",
                      LibraryWidthWarning, stacklevel=3)


def build_single(traj: Trajectory, T_ini: int, T: int, warn: bool = True) -> TrajectoryLibrary:
    """Hankel library of depth ``T_ini + T`` from one trajectory of length ``K``.

    ``N = K - T_ini - T + 1`` and column ``j`` of ``Phi`` is the controller state
    at the first input of column ``j``.
    """
    if T < 1 or T_ini < 0:
        raise ValueError("need T >= 1 and T_ini >= 0")
    K = len(traj)
    L = T_ini + T
    if K < L:
        raise ValueError(f"trajectory length {K} is shorter than T_ini + T = {L}")
    u, y = np.asarray(traj.u).reshape(K, -1), np.asarray(traj.y).reshape(K, -1)
    m, p = u.shape[1], y.shape[1]
    Hu, Hy = hankel(u, L), hankel(y, L)
    N = K - L + 1
    phi = np.asarray(traj.phi).reshape(K, -1)
    Phi = phi[:N].T.copy()
    if warn:
        _warn_width(N, m, p, Phi.shape[0], T_ini, T)
    return TrajectoryLibrary(Phi, Hu[:m * T_ini], Hy[:p * T_ini], Hu[m * T_ini:], Hy[p * T_ini:],
                             T_ini, T, "single")


def build_multi(trajs, T_ini: int, T: int, warn: bool = True) -> TrajectoryLibrary:
    """Stacked library; column ``i`` holds trajectory ``i``.

    Raises:
        ValueError: empty list or a trajectory whose length is not ``T_ini + T``.
    """
    trajs = list(trajs)
    if not trajs:
        raise ValueError("need at least one trajectory")
    L = T_ini + T
    for i, tr in enumerate(trajs):
        if len(tr) != L:
            raise ValueError(f"trajectory {i} has length {len(tr)}, expected {L}")
    U = np.stack([np.asarray(tr.u).reshape(L, -1) for tr in trajs], axis=-1)  # (L, m, N)
    Y = np.stack([np.asarray(tr.y).reshape(L, -1) for tr in trajs], axis=-1)
    Phi = np.stack([np.asarray(tr.phi).reshape(L, -1)[0] for tr in trajs], axis=-1)
    N, m, p = U.shape[2], U.shape[1], Y.shape[1]
    U, Y = U.reshape(L * m, N), Y.reshape(L * p, N)
    if warn:
        _warn_width(N, m, p, Phi.shape[0], T_ini, T)
    return TrajectoryLibrary(Phi, U[:m * T_ini], Y[:p * T_ini], U[m * T_ini:], Y[p * T_ini:],
                             T_ini, T, "multi")


def build_multi_from_arrays(u, y, phi, T_ini: int, T: int, warn: bool = True) -> TrajectoryLibrary:
    """Stacked library from batch arrays shaped ``(count, T_ini + T, dim)``."""
    u, y, phi = (np.asarray(a, dtype=float) for a in (u, y, phi))
    N, L, m = u.shape
    p = y.shape[2]
    if L != T_ini + T:
        raise ValueError(f"trajectories have length {L}, expected {T_ini + T}")
    U = u.reshape(N, L * m).T
    Y = y.reshape(N, L * p).T
    Phi = phi[:, 0, :].T.copy()
    if warn:
        _warn_width(N, m, p, Phi.shape[0], T_ini, T)
    return TrajectoryLibrary(Phi, U[:m * T_ini], Y[:p * T_ini], U[m * T_ini:], Y[p * T_ini:],
                             T_ini, T, "multi")


def validate(lib: TrajectoryLibrary, state_dim: int | None = None) -> RankReport:
    """Numerical rank of the stacked data matrix and input excitation check.

    When ``state_dim`` is given, ``state_margin`` reports how many block rows the
    input Hankel could still gain before the order ``T_ini + T + n`` excitation
    condition fails (negative means it already fails).
    """
    Xi = lib.Xi
    rows = Xi.shape[0]
    _, s, _ = truncated_svd(Xi) if Xi.size else (None, np.zeros(0), None)
    rank = int(s.size)
    U_in = np.vstack([lib.Up, lib.Uf])
    pe = bool(U_in.size) and int(truncated_svd(U_in)[1].size) == U_in.shape[0]
    bound = width_bound(lib.m, lib.p, lib.active_phi.shape[0], lib.T_ini, lib.T)
    margin = None
    if state_dim is not None and lib.source == "single":
        # an input Hankel of depth d built from K = N + L - 1 samples has
        # d*m rows and K - d + 1 columns
        L = lib.T_ini + lib.T
        max_depth = (lib.N + L) // (lib.m + 1)
        margin = int(max_depth - (L + state_dim))
    return RankReport(
        xi_rank=rank,
        xi_rows=rows,
        smallest_kept_singular_value=float(s[-1]) if rank else 0.0,
        pe_order_satisfied=pe,
        width_bound=bound,
        meets_width_bound=lib.N >= bound,
        full_row_rank=rank == rows,
        state_margin=margin,
    )
