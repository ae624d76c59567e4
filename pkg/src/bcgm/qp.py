"""Dense convex QP solver based on operator splitting (ADMM).

Problems have the form::

    minimize    0.5 x'Hx + f'x + offset
    subject to  A_eq x = b_eq,   lb <= A_in x <= ub

The iteration follows the OSQP scheme: Ruiz equilibration, a cached
factorization of ``H + sigma I + A' diag(rho) A``, over-relaxation, adaptive
``rho`` and a final active-set polish that solves the reduced KKT system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .numerics import symmetrize

INF = np.inf
SIGMA = 1e-6
ALPHA = 1.6
RHO_INIT = 0.1
RHO_EQ_FACTOR = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
CHECK_EVERY = 10
EPS_INFEASIBLE = 1e-5
KKT_TOL = 1e-5


@dataclass
class QpProblem:
    """Canonical QP with two-sided inequality bounds (infinite bounds allowed)."""

    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    offset: float = 0.0
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H must be square, got {H.shape}")
        self.H = symmetrize(H)
        self.f = np.asarray(self.f, dtype=float).reshape(d)
        self.A_eq = np.zeros((0, d)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, d)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.A_in = np.zeros((0, d)) if self.A_in is None else np.asarray(self.A_in, dtype=float).reshape(-1, d)
        c = self.A_in.shape[0]
        self.lb = np.full(c, -INF) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(c)
        self.ub = np.full(c, INF) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(c)
        if self.b_eq.size != self.A_eq.shape[0]:
            raise ValueError("b_eq length does not match A_eq")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bounds exceed upper bounds")
        for name in ("H", "f", "A_eq", "b_eq", "A_in"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains NaN or Inf")

    @property
    def d(self) -> int:
        return self.H.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.f @ x + self.offset)

    def scaled(self, factor: float) -> "QpProblem":
        """Same feasible set with the cost multiplied by ``factor``."""
        return QpProblem(factor * self.H, factor * self.f, self.A_eq, self.b_eq, self.A_in,
                         self.lb, self.ub, factor * self.offset, dict(self.labels))


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    y: np.ndarray | None = None
    polished: bool = False


def _stack_constraints(prob: QpProblem):
    """Merge equality and inequality rows; drop free rows and merge duplicates."""
    keep = ~(np.isinf(prob.lb) & np.isinf(prob.ub) & (prob.lb < 0) & (prob.ub > 0))
    A_in, lb, ub = prob.A_in[keep], prob.lb[keep], prob.ub[keep]
    origin = np.flatnonzero(keep)
    if A_in.shape[0] > 1:
        _, first, inverse = np.unique(A_in, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        k = first.size
        new_lb = np.full(k, -INF)
        new_ub = np.full(k, INF)
        np.maximum.at(new_lb, inverse, lb)
        np.minimum.at(new_ub, inverse, ub)
        A_in, lb, ub, origin = A_in[first], new_lb, new_ub, origin[first]
    A = np.vstack([prob.A_eq, A_in])
    l = np.concatenate([prob.b_eq, lb])
    u = np.concatenate([prob.b_eq, ub])
    return A, l, u, origin


def _ruiz(H, A, iters: int = 10):
    d, r = H.shape[0], A.shape[0]
    D, E = np.ones(d), np.ones(r)
    Hs, As = H.copy(), A.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(Hs).max(axis=0), np.abs(As).max(axis=0) if r else 0.0)
        dd = 1.0 / np.sqrt(np.where(col < 1e-4, 1.0, np.minimum(col, 1e4)))
        if r:
            row = np.abs(As).max(axis=1)
            ee = 1.0 / np.sqrt(np.where(row < 1e-4, 1.0, np.minimum(row, 1e4)))
        else:
            ee = np.ones(0)
        Hs = dd[:, None] * Hs * dd[None, :]
        As = ee[:, None] * As * dd[None, :]
        D *= dd
        E *= ee
    return D, E, Hs, As


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _residuals(H, f, A, x, z, y):
    Ax, Hx, ATy = A @ x, H @ x, A.T @ y
    prim = _inf_norm(Ax - z)
    dual = _inf_norm(Hx + f + ATy)
    return prim, dual, (_inf_norm(Ax), _inf_norm(z)), (_inf_norm(Hx), _inf_norm(ATy), _inf_norm(f))


def _kkt_residuals(H, f, A, l, u, x, y):
    """Primal bound violation and stationarity residual of a candidate pair."""
    Ax = A @ x
    prim = _inf_norm(np.maximum(Ax - u, 0) + np.maximum(l - Ax, 0)) if A.shape[0] else 0.0
    dual = _inf_norm(H @ x + f + (A.T @ y if A.shape[0] else 0.0))
    return prim, dual


def _certificate(A, l, u, dy, eps):
    """Primal infeasibility certificate from a dual iterate difference."""
    ny = _inf_norm(dy)
    if ny < 1e-12:
        return False
    if _inf_norm(A.T @ dy) > eps * ny:
        return False
    pos, neg = np.maximum(dy, 0), np.minimum(dy, 0)
    if np.any(np.isinf(u) & (pos > eps * ny)) or np.any(np.isinf(l) & (neg < -eps * ny)):
        return False
    val = np.sum(np.where(np.isfinite(u), u, 0) * pos) + np.sum(np.where(np.isfinite(l), l, 0) * neg)
    return val < -eps * ny


def _polish(H, f, A, l, u, z, y, delta=1e-9, refine=5):
    """Solve the equality-constrained KKT system on the guessed active set."""
    d = H.shape[0]
    lower = (z - l < -y) | (l == u)
    upper = (u - z < y) & ~lower
    act = np.flatnonzero(lower | upper)
    target = np.where(lower, l, u)[act]
    Aa = A[act]
    k = act.size
    K = np.block([[H, Aa.T], [Aa, np.zeros((k, k))]])
    Kreg = K + np.diag(np.concatenate([np.full(d, delta), np.full(k, -delta)]))
    rhs = np.concatenate([-f, target])
    try:
        sol = np.linalg.solve(Kreg, rhs)
        for _ in range(refine):
            sol = sol + np.linalg.solve(Kreg, rhs - K @ sol)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    x = sol[:d]
    y_full = np.zeros(A.shape[0])
    y_full[act] = sol[d:]
    # multipliers must carry the sign of the bound they push against
    y_full[lower & (l != u)] = np.minimum(y_full[lower & (l != u)], 0.0)
    y_full[upper] = np.maximum(y_full[upper], 0.0)
    return x, y_full


class _Factor:
    def __init__(self, P, A, rho, sigma):
        M = P + sigma * np.eye(P.shape[0]) + (A.T * rho) @ A
        M = symmetrize(M)
        try:
            self.c = cho_factor(M, lower=True, check_finite=False)
            self.inv = None
        except LinAlgError:
            self.c = None
            self.inv = np.linalg.pinv(M)

    def solve(self, b):
        if self.c is not None:
            return cho_solve(self.c, b, check_finite=False)
        return self.inv @ b


def solve(prob: QpProblem, tol_abs: float = 1e-6, tol_rel: float = 1e-6, max_iter: int = 20000,
          x0=None, y0=None, polish: bool = True) -> QpSolution:
    """Solve a convex QP.

    Returns a solution with status ``optimal`` when the combined residuals pass
    ``tol_abs + tol_rel * scale`` and the KKT residual of ``x`` is below 1e-5,
    ``infeasible`` when a primal infeasibility certificate is found and
    ``max_iterations`` otherwise.
    """
    H, f = prob.H, prob.f
    d = prob.d
    A, l, u, origin = _stack_constraints(prob)
    n_eq = prob.A_eq.shape[0]

    def finish(x, y, status, it, polished=False):
        y_orig = None
        if y is not None:
            y_orig = np.zeros(n_eq + prob.A_in.shape[0])
            y_orig[:n_eq] = y[:n_eq]
            y_orig[n_eq + origin] = y[n_eq:]
        pr, du = _kkt_residuals(H, f, A, l, u, x, y if y is not None else np.zeros(A.shape[0]))
        return QpSolution(x, status, prob.objective(x), pr, du, it, y_orig, polished)

    if A.shape[0] == 0:
        try:
            x = cho_solve(cho_factor(H, lower=True), -f)
        except LinAlgError:
            x = np.linalg.lstsq(H, -f, rcond=None)[0]
        return finish(x, np.zeros(0), "optimal", 0)
    if np.any(l > u):
        return finish(np.zeros(d) if x0 is None else np.asarray(x0, float), None, "infeasible", 0)

    D, E, Ps, As = _ruiz(H, A)
    qs = D * f
    c = 1.0 / max(np.mean(np.abs(Ps).max(axis=0)), _inf_norm(qs), 1e-4)
    c = min(c, 1e4)
    Ps, qs = c * Ps, c * qs
    ls, us = E * l, E * u

    eq = np.isclose(l, u, rtol=0, atol=1e-12)
    rho_scalar = RHO_INIT

    def rho_vec(rs):
        return np.where(eq, RHO_EQ_FACTOR * rs, rs)

    rho = rho_vec(rho_scalar)
    fac = _Factor(Ps, As, rho, SIGMA)

    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(d) / D
    z = np.clip(As @ x, ls, us)
    if y0 is None:
        y = np.zeros(A.shape[0])
    else:
        # warm duals arrive in the caller's row order; map them onto the stacked rows
        y0 = np.asarray(y0, dtype=float).reshape(-1)
        y = np.concatenate([y0[:n_eq], y0[n_eq + origin]]) / E * c
    status, it = "max_iterations", 0
    eps_a, eps_r = tol_abs, tol_rel

    def converged(x, z, y):
        nonlocal eps_a, eps_r
        xu, zu, yu = D * x, z / E, E * y / c
        prim, dual, pn, dn = _residuals(H, f, A, xu, zu, yu)
        if prim <= eps_a + eps_r * max(pn) and dual <= eps_a + eps_r * max(dn):
            pr, du = _kkt_residuals(H, f, A, l, u, xu, yu)
            if max(pr, du) <= KKT_TOL * (1 + max(max(pn), max(dn))):
                return True, prim, dual, pn, dn
            eps_a, eps_r = eps_a * 0.1, eps_r * 0.1
        return False, prim, dual, pn, dn

    # a warm start that already satisfies the stopping rule needs no iterations
    if x0 is not None and y0 is not None and converged(x, z, y)[0]:
        status = "optimal"
        max_iter = 0
    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        rhs = SIGMA * x - qs + As.T @ (rho * z - y)
        xt = fac.solve(rhs)
        zt = As @ xt
        x = ALPHA * xt + (1 - ALPHA) * x
        zr = ALPHA * zt + (1 - ALPHA) * z
        z = np.clip(zr + y / rho, ls, us)
        y = y + rho * (zr - z)

        if it % CHECK_EVERY:
            continue
        done, prim, dual, pn, dn = converged(x, z, y)
        if done:
            status = "optimal"
            break
        dy = E * (y - y_prev)
        if _certificate(A, l, u, dy, EPS_INFEASIBLE):
            return finish(D * x, None, "infeasible", it)
        y_prev = y.copy()
        # rebalance rho so primal and dual residuals shrink together
        pr_rel = prim / max(max(pn), 1e-10)
        du_rel = dual / max(max(dn), 1e-10)
        ratio = np.sqrt(pr_rel / max(du_rel, 1e-12))
        if ratio > 5 or ratio < 0.2:
            rho_scalar = float(np.clip(rho_scalar * ratio, RHO_MIN, RHO_MAX))
            rho = rho_vec(rho_scalar)
            fac = _Factor(Ps, As, rho, SIGMA)

    xu, zu, yu = D * x, z / E, E * y / c
    if polish:
        pol = _polish(H, f, A, l, u, zu, yu)
        if pol is not None:
            xp, yp = pol
            pr_p, du_p = _kkt_residuals(H, f, A, l, u, xp, yp)
            pr_a, du_a = _kkt_residuals(H, f, A, l, u, xu, yu)
            if max(pr_p, du_p) <= max(max(pr_a, du_a), tol_abs):
                if status != "optimal" and max(pr_p, du_p) <= tol_abs:
                    status = "optimal"
                return finish(xp, yp, status, it, polished=True)
    return finish(xu, yu, status, it)
