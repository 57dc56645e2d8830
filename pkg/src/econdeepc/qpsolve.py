"""Dense convex QP solver for predictive-control problems.

Solves::

    minimize    0.5 x'Hx + f'x + c0
    subject to  A_eq x = b_eq
                lo <= A_box x <= hi      (entries of lo/hi may be infinite)

with operator splitting (ADMM on the stacked constraint set, over-relaxed,
OSQP-style) followed by an active-set polish that solves the equality
constrained KKT system with iterative refinement.

The x-update matrix ``H + sigma I + A' diag(rho) A`` is handled through the
Woodbury identity around ``(H + sigma I)^{-1}``, which is cached together
with the Ruiz scaling. Receding-horizon controllers rebuild problems that
differ only in ``f``, ``b_eq``, ``lo`` and ``hi``, so a :class:`QPSolver`
reused across control steps factorizes once.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"

# relative tolerance of the primal infeasibility certificate
EPS_INFEASIBLE = 1e-5


class QPConstructionError(ValueError):
    pass


@dataclass
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    c0: float = 0.0
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_box: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.H = np.atleast_2d(np.asarray(self.H, float))
        n = self.H.shape[0]
        self.f = np.asarray(self.f, float).reshape(-1)
        if self.H.shape != (n, n) or self.f.shape != (n,):
            raise QPConstructionError(f"H {self.H.shape} and f {self.f.shape} are not conformal")
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)
        if self.A_box is None:
            self.A_box, self.lo, self.hi = np.zeros((0, n)), np.zeros(0), np.zeros(0)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, float)).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, float).reshape(-1)
        self.A_box = np.atleast_2d(np.asarray(self.A_box, float)).reshape(-1, n)
        m_b = self.A_box.shape[0]
        self.lo = np.full(m_b, -np.inf) if self.lo is None else np.asarray(self.lo, float).reshape(-1)
        self.hi = np.full(m_b, np.inf) if self.hi is None else np.asarray(self.hi, float).reshape(-1)
        if self.b_eq.shape != (self.A_eq.shape[0],):
            raise QPConstructionError("b_eq length does not match A_eq rows")
        if self.lo.shape != (m_b,) or self.hi.shape != (m_b,):
            raise QPConstructionError("box bounds do not match A_box rows")
        if np.any(self.lo > self.hi):
            raise QPConstructionError("box lower bound exceeds upper bound")
        scale = max(np.abs(self.H).max(initial=0.0), 1.0)
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-10 * scale:
            raise QPConstructionError("H is not symmetric")
        self.H = 0.5 * (self.H + self.H.T)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x + self.c0)

    def check_psd(self) -> None:
        """Raise unless the smallest eigenvalue of H is >= -1e-8 ||H||_F."""
        if self.n == 0:
            return
        shift = 1e-8 * max(np.linalg.norm(self.H), 1e-300)
        try:
            sla.cho_factor(self.H + shift * np.eye(self.n), check_finite=True)
        except sla.LinAlgError:
            raise QPConstructionError("H is not positive semidefinite") from None


@dataclass
class QPSolution:
    x: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    complementarity: float
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_box: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False
    solve_time: float = 0.0


def kkt_residuals(p: QPProblem, x, y_eq, y_box) -> tuple[float, float, float]:
    """Primal infeasibility, stationarity and complementarity (all infinity norms).

    Box multipliers follow the convention ``y > 0`` at the upper bound and
    ``y < 0`` at the lower bound.
    """
    r_eq = p.A_eq @ x - p.b_eq
    ax = p.A_box @ x
    viol = np.maximum(np.maximum(p.lo - ax, ax - p.hi), 0.0)
    prim = max(np.abs(r_eq).max(initial=0.0), viol.max(initial=0.0))
    stat = p.H @ x + p.f + p.A_eq.T @ y_eq + p.A_box.T @ y_box
    dual = np.abs(stat).max(initial=0.0)
    yp, ym = np.maximum(y_box, 0.0), np.maximum(-y_box, 0.0)
    with np.errstate(invalid="ignore"):
        gap_hi = np.where(np.isfinite(p.hi), np.abs(p.hi - ax), 1.0)
        gap_lo = np.where(np.isfinite(p.lo), np.abs(ax - p.lo), 1.0)
    comp = max((yp * gap_hi).max(initial=0.0), (ym * gap_lo).max(initial=0.0))
    return float(prim), float(dual), float(comp)


class _Factorization:
    """Scaled data and the cached pieces of the x-update solve."""

    def __init__(self, H: np.ndarray, A: np.ndarray, sigma: float, scaling_iters: int = 10):
        n, m = H.shape[0], A.shape[0]
        D, E = np.ones(n), np.ones(m)
        Hs, As = H.copy(), A.copy()
        for _ in range(scaling_iters):
            col = np.maximum(np.abs(Hs).max(axis=0, initial=0.0), np.abs(As).max(axis=0, initial=0.0))
            dD = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4)) if n else col
            dE = 1.0 / np.sqrt(np.clip(np.abs(As).max(axis=1, initial=0.0), 1e-4, 1e4)) if m else np.ones(0)
            Hs = dD[:, None] * Hs * dD[None, :]
            As = dE[:, None] * As * dD[None, :]
            D *= dD
            E *= dE
        hmean = np.abs(Hs).max(axis=0, initial=0.0).mean() if n else 1.0
        c = 1.0 / np.clip(hmean, 1e-4, 1e4) if hmean > 0 else 1.0
        self.H_ref, self.A_ref = H, A
        self.D, self.E, self.c = D, E, c
        self.Hs, self.As = c * Hs, As
        self.sigma = sigma
        Bf = sla.cho_factor(self.Hs + sigma * np.eye(n))
        self.Binv = sla.cho_solve(Bf, np.eye(n))
        self.Y = self.Binv @ self.As.T
        self.C = self.As @ self.Y
        self._rho_cache: dict[bytes, tuple] = {}

    def matches(self, H, A) -> bool:
        return (H.shape == self.H_ref.shape and A.shape == self.A_ref.shape
                and np.array_equal(H, self.H_ref) and np.array_equal(A, self.A_ref))

    def solver_for(self, rho: np.ndarray):
        key = rho.tobytes()
        fac = self._rho_cache.get(key)
        if fac is None:
            if len(self._rho_cache) > 16:
                self._rho_cache.clear()
            fac = sla.lu_factor(np.diag(1.0 / rho) + self.C) if rho.size else None
            self._rho_cache[key] = fac
        return fac

    def solve_x(self, v: np.ndarray, fac) -> np.ndarray:
        out = self.Binv @ v
        if fac is not None:
            out -= self.Y @ sla.lu_solve(fac, self.Y.T @ v)
        return out


class QPSolver:
    """Reusable solver workspace.

    Args:
        tol_p: Primal feasibility tolerance (equalities and boxes).
        tol_d: Stationarity tolerance.
        tol_c: Complementary-slackness tolerance.
        max_iters: ADMM iteration cap.
        rho: Initial ADMM penalty; equality rows use ``1e3 * rho``.
        sigma: Proximal regularization of the x-update and the polish.
        alpha: Over-relaxation factor in ``(0, 2)``.
        polish: Attempt active-set polishing.
    """

    def __init__(self, tol_p=1e-6, tol_d=1e-6, tol_c=1e-6, max_iters=20_000, rho=0.1, sigma=1e-6,
                 alpha=1.6, polish=True, check_every=10, adaptive_rho=True, check_psd=True,
                 refine_iters=25):
        self.tol_p, self.tol_d, self.tol_c = tol_p, tol_d, tol_c
        self.max_iters = max_iters
        self.rho0, self.sigma, self.alpha = rho, sigma, alpha
        self.polish = polish
        self.check_every = check_every
        self.adaptive_rho = adaptive_rho
        self.check_psd = check_psd
        self.refine_iters = refine_iters
        self._fac: _Factorization | None = None
        self._eq_pinv = None

    # -- helpers ---------------------------------------------------------
    def _prepare(self, p: QPProblem) -> _Factorization:
        A = np.vstack([p.A_eq, p.A_box])
        if self._fac is None or not self._fac.matches(p.H, A):
            if self.check_psd:
                p.check_psd()
            self._fac = _Factorization(p.H, A, self.sigma)
            self._eq_pinv = np.linalg.pinv(p.A_eq) if p.A_eq.shape[0] else None
        return self._fac

    def _equalities_infeasible(self, p: QPProblem) -> bool:
        if self._eq_pinv is None:
            return False
        x_ls = self._eq_pinv @ p.b_eq
        r = np.linalg.norm(p.A_eq @ x_ls - p.b_eq)
        return r > 1e-8 * max(np.linalg.norm(p.b_eq), 1.0)

    def _finish(self, p, x, y_eq, y_box, status, it, polished, t0) -> QPSolution:
        prim, dual, comp = kkt_residuals(p, x, y_eq, y_box)
        return QPSolution(x, p.objective(x), status, it, prim, dual, comp, y_eq, y_box, polished,
                          time.perf_counter() - t0)

    def _unscale(self, fac, p, xs, ys):
        x = fac.D * xs
        y = fac.E * ys / fac.c
        m_eq = p.A_eq.shape[0]
        return x, y[:m_eq], y[m_eq:]

    def _acceptable(self, res) -> bool:
        prim, dual, comp = res
        return prim <= self.tol_p and dual <= self.tol_d and comp <= self.tol_c

    def _polish(self, fac: _Factorization, q, l, u, zs, ys):
        """Solve the KKT system on the guessed active set; returns scaled ``(x, y)`` or None."""
        eq = l == u
        low = ~eq & (zs - l < -ys)
        upp = ~eq & (u - zs < ys)
        act = np.flatnonzero(eq | low | upp)
        b = np.where(upp, u, l)[act]
        A_act = fac.As[act]
        delta = fac.sigma
        S = fac.C[np.ix_(act, act)] + delta * np.eye(act.size)
        try:
            Sf = sla.lu_factor(S) if act.size else None
        except (ValueError, sla.LinAlgError):
            return None
        Y_act = fac.Y[:, act]

        def reg_solve(r1, r2):
            # (Hs + delta I) x + A' y = r1 ;  A x - delta y = r2
            bx = fac.Binv @ r1
            if Sf is None:
                return bx, np.zeros(0)
            y = sla.lu_solve(Sf, A_act @ bx - r2)
            return bx - Y_act @ y, y

        x, y = reg_solve(-q, b)
        for _ in range(self.refine_iters):
            r1 = -q - fac.Hs @ x - A_act.T @ y
            r2 = b - A_act @ x
            if max(np.abs(r1).max(initial=0), np.abs(r2).max(initial=0)) < 1e-13:
                break
            dx, dy = reg_solve(r1, r2)
            x, y = x + dx, y + dy
        y_full = np.zeros(l.size)
        y_full[act] = y
        # multiplier signs must match the active side
        if np.any(y_full[low] > 1e-9) or np.any(y_full[upp] < -1e-9):
            return None
        return x, y_full

    # -- main entry ------------------------------------------------------
    def solve(self, p: QPProblem, x0: np.ndarray | None = None, y0: np.ndarray | None = None) -> QPSolution:
        t0 = time.perf_counter()
        fac = self._prepare(p)
        n = p.n
        m_eq = p.A_eq.shape[0]
        if self._equalities_infeasible(p):
            x = self._eq_pinv @ p.b_eq
            return self._finish(p, x, np.zeros(m_eq), np.zeros(p.A_box.shape[0]), INFEASIBLE, 0, False, t0)

        l_u = np.concatenate([p.b_eq, p.lo])
        u_u = np.concatenate([p.b_eq, p.hi])
        l, u = fac.E * l_u, fac.E * u_u
        q = fac.c * fac.D * p.f
        m = l.size
        eq_rows = l == u
        rho = np.where(eq_rows, 1e3 * self.rho0, self.rho0)
        rho_scalar = self.rho0

        xs = np.zeros(n) if x0 is None else np.asarray(x0, float) / fac.D
        zs = np.clip(fac.As @ xs, l, u)
        ys = np.zeros(m) if y0 is None else fac.c * np.asarray(y0, float) / fac.E
        sig, alpha = fac.sigma, self.alpha
        As, Hs = fac.As, fac.Hs
        lu = fac.solver_for(rho)

        best = None
        eps_admm = 1e-4
        it = 0
        ys_prev = ys.copy()
        while it < self.max_iters:
            it += 1
            rhs = sig * xs - q + As.T @ (rho * zs - ys)
            xt = fac.solve_x(rhs, lu)
            zt = As @ xt
            xs = alpha * xt + (1 - alpha) * xs
            zr = alpha * zt + (1 - alpha) * zs
            zs_new = np.clip(zr + ys / rho, l, u)
            ys = ys + rho * (zr - zs_new)
            zs = zs_new

            if it % self.check_every and it != self.max_iters:
                continue
            # scaled residuals for ADMM convergence and rho adaptation
            Ax = As @ xs
            Hx = Hs @ xs
            Aty = As.T @ ys
            r_p = np.abs(Ax - zs).max(initial=0.0)
            r_d = np.abs(Hx + q + Aty).max(initial=0.0)
            n_p = max(np.abs(Ax).max(initial=0.0), np.abs(zs).max(initial=0.0), 1e-12)
            n_d = max(np.abs(Hx).max(initial=0.0), np.abs(Aty).max(initial=0.0), np.abs(q).max(initial=0.0), 1e-12)

            x_u, ye, yb = self._unscale(fac, p, xs, ys)
            res = kkt_residuals(p, x_u, ye, yb)
            if best is None or max(res) < max(best[3]):
                best = (x_u, ye, yb, res)
            if self._acceptable(res):
                return self._finish(p, x_u, ye, yb, OPTIMAL, it, False, t0)

            if r_p <= eps_admm * (1 + n_p) and r_d <= eps_admm * (1 + n_d):
                if self.polish:
                    pol = self._polish(fac, q, l, u, zs, ys)
                    if pol is not None:
                        xp, yp = pol
                        x_pu, ye_p, yb_p = self._unscale(fac, p, xp, yp)
                        res_p = kkt_residuals(p, x_pu, ye_p, yb_p)
                        if self._acceptable(res_p):
                            return self._finish(p, x_pu, ye_p, yb_p, OPTIMAL, it, True, t0)
                        if max(res_p) < max(best[3]):
                            best = (x_pu, ye_p, yb_p, res_p)
                eps_admm = max(eps_admm * 0.1, 1e-12)

            # primal infeasibility certificate
            dy = ys - ys_prev
            ys_prev = ys.copy()
            ndy = np.abs(dy).max(initial=0.0)
            if ndy > 1e-12 and np.abs(As.T @ dy).max(initial=0.0) <= EPS_INFEASIBLE * ndy:
                with np.errstate(invalid="ignore"):
                    sup = np.where(dy > 0, u * dy, 0.0) + np.where(dy < 0, l * dy, 0.0)
                sup = np.where(dy == 0, 0.0, sup)
                if np.all(np.isfinite(sup)) and sup.sum() < -EPS_INFEASIBLE * ndy:
                    x_u, ye, yb = self._unscale(fac, p, xs, ys)
                    return self._finish(p, x_u, ye, yb, INFEASIBLE, it, False, t0)

            if self.adaptive_rho:
                ratio = np.sqrt((r_p / n_p) / max(r_d / n_d, 1e-30))
                new = float(np.clip(rho_scalar * ratio, 1e-6, 1e6))
                if new > 5 * rho_scalar or new < 0.2 * rho_scalar:
                    # round to a power-of-two grid so repeated solves reuse cached factors
                    rho_scalar = float(2.0 ** np.round(np.log2(new)))
                    rho = np.where(eq_rows, 1e3 * rho_scalar, rho_scalar)
                    lu = fac.solver_for(rho)

        x_u, ye, yb, _ = best
        return self._finish(p, x_u, ye, yb, MAX_ITERATIONS, it, False, t0)


def solve(problem: QPProblem, tol_p=1e-6, tol_d=1e-6, tol_c=1e-6, max_iters=20_000,
          x0: np.ndarray | None = None, **kwargs) -> QPSolution:
    """One-shot solve; see :class:`QPSolver` for the options."""
    return QPSolver(tol_p=tol_p, tol_d=tol_d, tol_c=tol_c, max_iters=max_iters, **kwargs).solve(problem, x0)
