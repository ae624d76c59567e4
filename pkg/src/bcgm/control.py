"""Predictive controllers as QP builders, and the closed-loop runner.

Every controller produces a :class:`~bcgm.qp.QpProblem` whose first ``m*T``
variables are the planned inputs ``u_f``. Output constraints are softened by
non-negative slacks (one per future output entry, shared by all scenarios)
with a large quadratic penalty, so every QP is feasible; violations are
judged on the plant's realized outputs.

Scenario controllers all reduce to the same structure: the predicted future
output of scenario ``j`` is ``Hu @ u_f + a_j`` with a frozen offset ``a_j``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cgm import CgmPredictor
from .kalman import KfState, kf_step, predictor_matrices
from .library import TrajectoryLibrary
from .lti import DivergenceError, NoiseModel, PlantSimulator, StateSpaceModel, Trajectory
from .numerics import RngStream, chol_psd, clamp_psd, pinv, symmetrize
from .qp import INF, QpProblem, solve

CONTROLLER_KINDS = ("ssmpc_model", "sspc_gen", "deepc", "deepc_variant", "spc", "kf_dmpc")


class SingularScatterError(ValueError):
    """Conditional covariance of the generative model is singular."""


@dataclass(frozen=True)
class ControlObjective:
    """Tracking cost ``w_y |y - y_ref|^2 + w_u |u|^2`` per step with ``y <= y_upper``."""

    y_ref: float | tuple = 10.0
    w_y: float = 1.0
    w_u: float = 0.01
    y_upper: float | tuple = 12.0
    u_lower: float = -INF
    u_upper: float = INF
    slack_weight: float = 1e6

    def __post_init__(self):
        if self.w_y < 0 or self.w_u < 0 or self.slack_weight < 0:
            raise ValueError("weights must be non-negative")
        if self.u_lower > self.u_upper:
            raise ValueError("u_lower exceeds u_upper")

    def ref(self, p: int, T: int) -> np.ndarray:
        return np.tile(np.broadcast_to(np.asarray(self.y_ref, dtype=float), (p,)), T)

    def upper(self, p: int, T: int) -> np.ndarray:
        return np.tile(np.broadcast_to(np.asarray(self.y_upper, dtype=float), (p,)), T)

    def stage_cost(self, y, u) -> float:
        y = np.asarray(y, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        r = np.broadcast_to(np.asarray(self.y_ref, dtype=float), y.shape)
        return float(self.w_y * np.sum((y - r) ** 2) + self.w_u * np.sum(u ** 2))

    def scaled(self, factor: float) -> "ControlObjective":
        return ControlObjective(self.y_ref, factor * self.w_y, factor * self.w_u, self.y_upper,
                                self.u_lower, self.u_upper, factor * self.slack_weight)


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    M: int = 50
    T_ini: int = 8
    T: int = 10
    gamma_y: float = 100.0
    gamma_z: float = 1e6
    gamma_tilde: float = 1000.0
    N: int | None = None
    fast_sampling: bool = True

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}; expected one of {CONTROLLER_KINDS}")
        if self.M < 1:
            raise ValueError("scenario count M must be at least 1")
        if self.T < 1 or self.T_ini < 0:
            raise ValueError("need T >= 1 and T_ini >= 0")

    @property
    def label(self) -> str:
        return self.kind if self.N is None else f"{self.kind}_N{self.N}"


@dataclass
class ClosedLoopResult:
    realized_cost: float
    violated: bool
    diverged: bool
    trajectory: Trajectory
    solve_ms: np.ndarray
    n_violations: int = 0
    failed_reason: str | None = None
    qp_status_counts: dict = field(default_factory=dict)

    @property
    def mean_solve_ms(self) -> float:
        return float(np.mean(self.solve_ms)) if self.solve_ms.size else 0.0

    @property
    def max_solve_ms(self) -> float:
        return float(np.max(self.solve_ms)) if self.solve_ms.size else 0.0


def scenario_qp(Hu, offsets, obj: ControlObjective, m: int, p: int, T: int) -> QpProblem:
    """QP over ``col(u_f, s)`` for scenario predictions ``Hu u_f + offsets[j]``."""
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    M = offsets.shape[0]
    mT, pT = m * T, p * T
    ref = obj.ref(p, T)
    dev = offsets - ref
    d = mT + pT
    H = np.zeros((d, d))
    H[:mT, :mT] = 2 * M * (obj.w_y * Hu.T @ Hu + obj.w_u * np.eye(mT))
    H[mT:, mT:] = 2 * M * obj.slack_weight * np.eye(pT)
    f = np.zeros(d)
    f[:mT] = 2 * obj.w_y * Hu.T @ dev.sum(axis=0)
    offset = obj.w_y * float(np.sum(dev ** 2))
    return QpProblem(H, f, *_output_and_input_rows(Hu, offsets, obj, m, p, T, d), offset=offset,
                     labels={"u": slice(0, mT), "s": slice(mT, d)})


def _output_and_input_rows(Hu, offsets, obj, m, p, T, d, u_cols=None, s_cols=None):
    """Equality-free constraint rows: soft output bounds, slack signs, input box."""
    mT, pT = m * T, p * T
    u_cols = slice(0, mT) if u_cols is None else u_cols
    s_cols = slice(mT, mT + pT) if s_cols is None else s_cols
    upper = obj.upper(p, T)
    rows, lbs, ubs = [], [], []
    if np.any(np.isfinite(upper)):
        for a in np.atleast_2d(offsets):
            R = np.zeros((pT, d))
            R[:, u_cols] = Hu
            R[:, s_cols] = -np.eye(pT)
            rows.append(R)
            lbs.append(np.full(pT, -INF))
            ubs.append(upper - a)
    S = np.zeros((pT, d))
    S[:, s_cols] = np.eye(pT)
    rows.append(S)
    lbs.append(np.zeros(pT))
    ubs.append(np.full(pT, INF))
    if np.isfinite(obj.u_lower) or np.isfinite(obj.u_upper):
        B = np.zeros((mT, d))
        B[:, u_cols] = np.eye(mT)
        rows.append(B)
        lbs.append(np.full(mT, obj.u_lower))
        ubs.append(np.full(mT, obj.u_upper))
    return None, None, np.vstack(rows), np.concatenate(lbs), np.concatenate(ubs)


def build_ssmpc_model(model: StateSpaceModel, kf_state: KfState, obj: ControlObjective, M: int,
                      rng: RngStream, T: int) -> QpProblem:
    """Model-based scenario MPC with initial-state, process and measurement draws."""
    mats = predictor_matrices(model, T)
    n, p = model.n, model.p
    Fx = chol_psd(symmetrize(np.asarray(kf_state.P_minus, dtype=float)))
    Fw = chol_psd(model.Q)
    Fv = chol_psd(model.R)
    x = kf_state.x_hat_minus + rng.standard_normal((M, n)) @ Fx.T
    w = (rng.standard_normal((M * T, n)) @ Fw.T).reshape(M, n * T)
    v = (rng.standard_normal((M * T, p)) @ Fv.T).reshape(M, p * T)
    offsets = x @ mats.O_f.T + w @ mats.G_f.T + v
    return scenario_qp(mats.H_f, offsets, obj, model.m, p, T)


def build_kf_dmpc(model: StateSpaceModel, kf_state: KfState, obj: ControlObjective, T: int) -> QpProblem:
    """Deterministic MPC on the Kalman mean prediction."""
    mats = predictor_matrices(model, T)
    return scenario_qp(mats.H_f, mats.O_f @ kf_state.x_hat_minus, obj, model.m, model.p, T)


def _past(pred: CgmPredictor, u_ini, y_ini) -> np.ndarray:
    past = np.concatenate([np.asarray(u_ini, float).reshape(-1), np.asarray(y_ini, float).reshape(-1)])
    return pred.past_coef @ past


def build_sspc_gen(pred: CgmPredictor, u_ini, y_ini, obj: ControlObjective, M: int, rng: RngStream,
                   fast: bool = True) -> QpProblem:
    """Scenario controller whose scenarios come from the generative model.

    Scenario ``j`` is ``Theta_f z + S sqrt(N) beta_j`` with ``beta_j ~ N(0, I/N)``,
    i.e. ``S xi_j`` with ``xi_j`` standard normal; ``fast`` swaps ``S`` for the
    Cholesky factor of ``Sigma_f``, which has the same distribution.
    """
    F = pred.Sigma_f_chol if (fast or pred.S is None) else pred.S
    offsets = _past(pred, u_ini, y_ini) + rng.standard_normal((M, F.shape[1])) @ F.T
    return scenario_qp(pred.input_coef, offsets, obj, pred.m, pred.p, pred.T)


def build_spc(pred: CgmPredictor, u_ini, y_ini, obj: ControlObjective) -> QpProblem:
    """Deterministic data-driven MPC on the conditional mean."""
    return scenario_qp(pred.input_coef, _past(pred, u_ini, y_ini), obj, pred.m, pred.p, pred.T)


def build_dmpc(model_or_pred, state_or_history, obj: ControlObjective, T: int | None = None) -> QpProblem:
    """Single nominal prediction from either a model plus filter state or a predictor."""
    if isinstance(model_or_pred, CgmPredictor):
        u_ini, y_ini = state_or_history
        return build_spc(model_or_pred, u_ini, y_ini, obj)
    if T is None:
        raise ValueError("horizon T is required for the model-based variant")
    return build_kf_dmpc(model_or_pred, state_or_history, obj, T)


def build_deepc(lib: TrajectoryLibrary, u_ini, y_ini, obj: ControlObjective, gamma_y: float,
                gamma_z: float, Z_proj=None) -> QpProblem:
    """Regularized DeePC over ``col(u_f, g, sigma_y, s)``.

    Constraints: ``Up g = u_ini``, ``Yp g - sigma_y = y_ini``, ``Uf g = u_f``;
    the future output is ``Yf g``. ``Z_proj`` may pass a precomputed
    ``I - Z^+ Z`` to avoid recomputing it every step.
    """
    m, p, T, T_ini, N = lib.m, lib.p, lib.T, lib.T_ini, lib.N
    mT, pT, pTi = m * T, p * T, p * T_ini
    gs = slice(mT, mT + N)
    ss = slice(mT + N, mT + N + pTi)
    sl = slice(mT + N + pTi, mT + N + pTi + pT)
    d = sl.stop
    if Z_proj is None:
        Z = lib.Z
        Z_proj = np.eye(N) - pinv(Z) @ Z
    ref = obj.ref(p, T)
    H = np.zeros((d, d))
    f = np.zeros(d)
    H[:mT, :mT] = 2 * obj.w_u * np.eye(mT)
    H[gs, gs] = 2 * (obj.w_y * lib.Yf.T @ lib.Yf + gamma_z * symmetrize(Z_proj.T @ Z_proj))
    f[gs] = -2 * obj.w_y * lib.Yf.T @ ref
    H[ss, ss] = 2 * gamma_y * np.eye(pTi)
    H[sl, sl] = 2 * obj.slack_weight * np.eye(pT)
    A_eq = np.zeros((m * T_ini + pTi + mT, d))
    A_eq[:m * T_ini, gs] = lib.Up
    A_eq[m * T_ini:m * T_ini + pTi, gs] = lib.Yp
    A_eq[m * T_ini:m * T_ini + pTi, ss] = -np.eye(pTi)
    A_eq[m * T_ini + pTi:, gs] = lib.Uf
    A_eq[m * T_ini + pTi:, :mT] = -np.eye(mT)
    b_eq = np.concatenate([np.asarray(u_ini, float).reshape(-1), np.asarray(y_ini, float).reshape(-1),
                           np.zeros(mT)])
    _, _, A_in, lb, ub = _output_and_input_rows(np.zeros((pT, mT)), np.zeros((1, pT)), obj, m, p, T, d,
                                                u_cols=slice(0, mT), s_cols=sl)
    # the output rows act through g, not u_f
    if np.any(np.isfinite(obj.upper(p, T))):
        A_in[:pT, gs] = lib.Yf
    return QpProblem(H, f, A_eq, b_eq, A_in, lb, ub, offset=obj.w_y * float(ref @ ref),
                     labels={"u": slice(0, mT), "g": gs, "sigma_y": ss, "s": sl})


def scatter_matrix(pred: CgmPredictor) -> np.ndarray:
    """``Gamma = N Sigma_f``, the scatter of the projected future outputs."""
    return pred.N * pred.Sigma_f


def build_deepc_variant(pred: CgmPredictor, u_ini, y_ini, obj: ControlObjective, gamma_tilde: float,
                        Gamma_inv=None) -> QpProblem:
    """Likelihood-regularized variant over ``col(u_f, r, s)`` with ``y_f = Theta_f z + r``.

    ``r`` is the row-space image of the null-space coefficient and is penalized
    by ``gamma_tilde * r' Gamma^{-1} r``.

    Raises:
        SingularScatterError: when ``Gamma`` is singular.
    """
    m, p, T = pred.m, pred.p, pred.T
    mT, pT = m * T, p * T
    if Gamma_inv is None:
        Gamma_inv = inverse_scatter(pred)
    base = _past(pred, u_ini, y_ini)
    Hu = pred.input_coef
    ref = obj.ref(p, T)
    rs = slice(mT, mT + pT)
    sl = slice(mT + pT, mT + 2 * pT)
    d = sl.stop
    J = np.hstack([Hu, np.eye(pT)])  # y_f - base as a map of col(u_f, r)
    H = np.zeros((d, d))
    H[:mT + pT, :mT + pT] = 2 * obj.w_y * J.T @ J
    H[:mT, :mT] += 2 * obj.w_u * np.eye(mT)
    H[rs, rs] += 2 * gamma_tilde * Gamma_inv
    H[sl, sl] = 2 * obj.slack_weight * np.eye(pT)
    f = np.zeros(d)
    f[:mT + pT] = 2 * obj.w_y * J.T @ (base - ref)
    _, _, A_in, lb, ub = _output_and_input_rows(Hu, base[None, :], obj, m, p, T, d,
                                                u_cols=slice(0, mT), s_cols=sl)
    if np.any(np.isfinite(obj.upper(p, T))):
        A_in[:pT, rs] = np.eye(pT)
    return QpProblem(H, f, None, None, A_in, lb, ub, offset=obj.w_y * float((base - ref) @ (base - ref)),
                     labels={"u": slice(0, mT), "r": rs, "s": sl})


def inverse_scatter(pred: CgmPredictor) -> np.ndarray:
    Gamma = scatter_matrix(pred)
    lam, V, _ = clamp_psd(Gamma, "Gamma")
    ref = max(lam[-1] if lam.size else 0.0, pred.N * pred.data_scale, 1e-300)
    if lam.size == 0 or lam[0] <= 1e-12 * ref:
        raise SingularScatterError(
            "conditional covariance is singular; use a noisy library with more columns to restore full rank")
    return symmetrize((V / lam) @ V.T)


class PredictiveController:
    """Receding-horizon wrapper that builds one QP per step."""

    def __init__(self, spec: ControllerSpec, obj: ControlObjective, m: int, p: int,
                 model: StateSpaceModel | None = None, pred: CgmPredictor | None = None,
                 lib: TrajectoryLibrary | None = None, initial_cov=None):
        self.spec, self.obj, self.m, self.p = spec, obj, m, p
        self.model, self.pred, self.lib = model, pred, lib
        kind = spec.kind
        if kind in ("ssmpc_model", "kf_dmpc") and model is None:
            raise ValueError(f"{kind} needs the plant model")
        if kind in ("sspc_gen", "spc", "deepc_variant") and pred is None:
            raise ValueError(f"{kind} needs a fitted predictor")
        if kind == "deepc" and lib is None:
            raise ValueError("deepc needs the trajectory library")
        if pred is not None and (pred.T_ini != spec.T_ini or pred.T != spec.T):
            raise ValueError("predictor windows do not match the controller spec")
        self.initial_cov = None if initial_cov is None else np.asarray(initial_cov, dtype=float)
        self._Z_proj = None
        self._Gamma_inv = None
        if kind == "deepc":
            Z = lib.Z
            self._Z_proj = np.eye(lib.N) - pinv(Z) @ Z
        if kind == "deepc_variant":
            self._Gamma_inv = inverse_scatter(pred)
        self.reset()

    @property
    def uses_filter(self) -> bool:
        return self.spec.kind in ("ssmpc_model", "kf_dmpc")

    def reset(self):
        self.last_x = None
        if self.uses_filter:
            n = self.model.n
            P0 = np.zeros((n, n)) if self.initial_cov is None else self.initial_cov
            self.kf = KfState(np.zeros(n), P0)

    def observe(self, u, y):
        if self.uses_filter:
            self.kf = kf_step(self.model, self.kf, u, y)

    def build(self, u_ini, y_ini, rng: RngStream) -> QpProblem:
        s, obj = self.spec, self.obj
        if s.kind == "ssmpc_model":
            return build_ssmpc_model(self.model, self.kf, obj, s.M, rng, s.T)
        if s.kind == "kf_dmpc":
            return build_kf_dmpc(self.model, self.kf, obj, s.T)
        if s.kind == "sspc_gen":
            return build_sspc_gen(self.pred, u_ini, y_ini, obj, s.M, rng, fast=s.fast_sampling)
        if s.kind == "spc":
            return build_spc(self.pred, u_ini, y_ini, obj)
        if s.kind == "deepc":
            return build_deepc(self.lib, u_ini, y_ini, obj, s.gamma_y, s.gamma_z, self._Z_proj)
        return build_deepc_variant(self.pred, u_ini, y_ini, obj, s.gamma_tilde, self._Gamma_inv)

    def warm_start(self, d: int):
        """Previous solution with the planned inputs shifted one step."""
        if self.last_x is None or self.last_x.size != d:
            return None
        x = self.last_x.copy()
        m, mT = self.m, self.m * self.spec.T
        x[:mT - m] = self.last_x[m:mT]
        return x


def run_closed_loop(plant: StateSpaceModel, controller: PredictiveController, obj: ControlObjective,
                    steps: int, rng: RngStream, noise: NoiseModel | None = None, x0=None) -> ClosedLoopResult:
    """Apply zero inputs for ``T_ini`` steps, then receding-horizon control.

    ``steps`` counts every applied input including the initial zero-input
    window. At step ``t`` the controller sees the last ``T_ini`` inputs and
    outputs up to ``t - 1``; its first planned input is applied and ``y_t`` is
    then measured. The realized cost covers the steps after the initial window;
    a violation is any measured output above ``y_upper`` during the run.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    noise = NoiseModel() if noise is None else noise
    spec = controller.spec
    T_ini, m, p = spec.T_ini, plant.m, plant.p
    controller.reset()
    sim = PlantSimulator(plant, noise, rng.spawn("plant"), x0)
    scen_rng = rng.spawn("scenarios")
    U = np.zeros((steps, m))
    Y = np.zeros((steps, p))
    X = np.zeros((steps, plant.n))
    solve_ms, status_counts = [], {}
    cost, diverged, failed = 0.0, False, None
    upper = np.broadcast_to(np.asarray(obj.y_upper, dtype=float), (p,))
    n_steps = steps
    for t in range(steps):
        u = np.zeros(m)
        if t >= T_ini:
            u_ini = U[t - T_ini:t].reshape(-1)
            y_ini = Y[t - T_ini:t].reshape(-1)
            t0 = time.perf_counter()
            qp = controller.build(u_ini, y_ini, scen_rng)
            sol = solve(qp, x0=controller.warm_start(qp.d))
            solve_ms.append(1e3 * (time.perf_counter() - t0))
            status_counts[sol.status] = status_counts.get(sol.status, 0) + 1
            if sol.status == "infeasible":
                failed = f"QP infeasible at step {t}"
            else:
                controller.last_x = sol.x
                u = sol.x[:m]
        X[t] = sim.x
        Y[t] = sim.measure()
        U[t] = u
        controller.observe(u, Y[t])
        if t >= T_ini:
            cost += obj.stage_cost(Y[t], u)
        try:
            sim.advance(u)
        except DivergenceError:
            diverged, failed = True, f"state diverged at step {t}"
            n_steps = t + 1
            break
    over = Y[:n_steps] > upper
    n_viol = int(np.any(over, axis=1).sum())
    traj = Trajectory(U[:n_steps], Y[:n_steps], np.zeros((n_steps, 0)), X[:n_steps])
    return ClosedLoopResult(cost, n_viol > 0, diverged, traj, np.asarray(solve_ms), n_viol, failed,
                            status_counts)
