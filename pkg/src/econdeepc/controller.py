"""Tracking, economic and reduced-order economic DeePC in a receding-horizon loop.

Every controller decides through a convex QP in the Hankel coefficient
vector ``g``. Predicted sequences are stacked time-major, so ``U_f @ g`` is
``[u_0; u_1; ...; u_{N_p-1}]`` with each block of length ``n_u``.

The economic controller works in the model's normalized input units (the
Hankel input rows, ``R`` and the input box all live there) and in lifted
output coordinates ``z``. Applied inputs are converted back to physical
units and clamped to the admissible box before reaching the plant.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .learn import MODES, LiftingModel
from .plant import InputBounds
from .qpsolve import INFEASIBLE, MAX_ITERATIONS, OPTIMAL, QPProblem, QPSolution, QPSolver
from .trajkit import (
    RANK_RTOL,
    DimensionError,
    HankelBlocks,
    Trajectory,
    build_hankel,
    partition_hankel,
    reduce_hankel,
)

logger = logging.getLogger(__name__)

FALLBACK = "fallback"
ORDERS = ("full", "reduced")


class ControllerError(RuntimeError):
    """Raised when a QP solution cannot be turned into an input."""

    def __init__(self, message: str, solution: QPSolution | None = None):
        super().__init__(message)
        self.solution = solution


@dataclass
class ControllerConfig:
    """Settings shared by the predictive controllers.

    Attributes:
        T_ini: Length of the initial window.
        N_p: Prediction horizon.
        bounds: Admissible input box in physical units.
        R: Input-rate weight (``n_u x n_u``) in the controller's input units;
            identity when omitted.
        beta: Weight on the economic surrogate.
        lambda_g: Optional ``lambda_g ||g||^2`` regularization.
        y_c_lo, y_c_hi: Physical bounds on the reconstructed constrained
            outputs; ``None`` disables the output box.
        order: ``"full"`` or ``"reduced"``.
        n_r: Retained rank for the reduced controller; ``None`` keeps every
            singular value above ``rank_rtol``.
        mode: ``"profit"`` (maximize) or ``"cost"`` (minimize); must match the
            model's cost head.
        soft_penalty: Quadratic weight on the initial-window slack used after
            an infeasible step.
    """

    T_ini: int = 2
    N_p: int = 5
    bounds: InputBounds | None = None
    R: np.ndarray | None = None
    beta: float = 1.0
    lambda_g: float = 1e-4
    y_c_lo: np.ndarray | None = None
    y_c_hi: np.ndarray | None = None
    order: str = "full"
    n_r: int | None = None
    rank_rtol: float = RANK_RTOL
    mode: str = "profit"
    soft_penalty: float = 1e6
    tol: float = 1e-6
    max_iters: int = 20_000

    def __post_init__(self) -> None:
        if self.T_ini < 1 or self.N_p < 1:
            raise ValueError(f"T_ini and N_p must be >= 1, got {self.T_ini}, {self.N_p}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.lambda_g < 0:
            raise ValueError(f"lambda_g must be >= 0, got {self.lambda_g}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.R is not None:
            self.R = np.atleast_2d(np.asarray(self.R, float))
            if self.R.shape[0] != self.R.shape[1] or np.abs(self.R - self.R.T).max() > 1e-12:
                raise ValueError("R must be a symmetric square matrix")
            try:
                np.linalg.cholesky(self.R)
            except np.linalg.LinAlgError:
                raise ValueError("R must be positive definite") from None
        if (self.y_c_lo is None) != (self.y_c_hi is None):
            raise ValueError("give both y_c_lo and y_c_hi or neither")
        if self.y_c_lo is not None:
            self.y_c_lo = np.asarray(self.y_c_lo, float).reshape(-1)
            self.y_c_hi = np.asarray(self.y_c_hi, float).reshape(-1)
            if self.y_c_lo.shape != self.y_c_hi.shape or np.any(self.y_c_lo > self.y_c_hi):
                raise ValueError("y_c bounds must have equal length with lo <= hi")

    @property
    def L(self) -> int:
        return self.T_ini + self.N_p

    def R_for(self, n_u: int) -> np.ndarray:
        if self.R is None:
            return np.eye(n_u)
        if self.R.shape != (n_u, n_u):
            raise DimensionError(f"R is {self.R.shape}, expected ({n_u}, {n_u})")
        return self.R


@dataclass
class InitWindow:
    """Most recent ``T_ini`` input/output pairs in physical units."""

    u_ini: np.ndarray
    y_ini: np.ndarray
    u_prev: np.ndarray

    def __post_init__(self) -> None:
        self.u_ini = np.atleast_2d(np.asarray(self.u_ini, float))
        self.y_ini = np.atleast_2d(np.asarray(self.y_ini, float))
        self.u_prev = np.asarray(self.u_prev, float).reshape(-1)
        if self.u_ini.shape[0] != self.y_ini.shape[0]:
            raise DimensionError(f"u_ini has {self.u_ini.shape[0]} steps, y_ini {self.y_ini.shape[0]}")
        if self.u_prev.shape[0] != self.u_ini.shape[1]:
            raise DimensionError("u_prev dimension differs from u_ini")

    @property
    def T_ini(self) -> int:
        return self.u_ini.shape[0]


# --- Hankel blocks ------------------------------------------------------------


def tracking_blocks(traj: Trajectory, T_ini: int, N_p: int) -> HankelBlocks:
    """Blocks over physical inputs and outputs."""
    L = T_ini + N_p
    return partition_hankel(build_hankel(traj.inputs, L), build_hankel(traj.outputs, L), T_ini, N_p)


def econ_blocks(traj: Trajectory, model: LiftingModel, T_ini: int, N_p: int) -> HankelBlocks:
    """Blocks over normalized inputs and lifted outputs."""
    L = T_ini + N_p
    H_u = build_hankel(model.scaling.norm_u(traj.inputs), L)
    H_z = build_hankel(model.lift(traj.outputs), L)
    return partition_hankel(H_u, H_z, T_ini, N_p)


def build_reduced(blocks: HankelBlocks, n_r: int | None = None, rtol: float = RANK_RTOL) -> HankelBlocks:
    """Replace the blocks by the rows of ``W_1 Σ_1`` of their stacked matrix.

    The returned blocks have ``n_r`` columns, so the decision vector of any
    QP assembled from them has dimension ``n_r``.
    """
    red = reduce_hankel(blocks.stacked(), n_r, rtol)
    M = red.matrix
    r = np.cumsum([0, *(b.shape[0] for b in (blocks.U_p, blocks.U_f, blocks.Z_p, blocks.Z_f))])
    return HankelBlocks(M[r[0]:r[1]], M[r[1]:r[2]], M[r[2]:r[3]], M[r[3]:r[4]], blocks.T_ini, blocks.N_p)


def _difference_operator(n_u: int, N_p: int) -> np.ndarray:
    """``D`` with ``D @ [u_0; ...; u_{N-1}] = [u_0; u_1 - u_0; ...]``."""
    return np.kron(np.eye(N_p) - np.eye(N_p, k=-1), np.eye(n_u))


def _block_weight(W, dim: int, N_p: int) -> np.ndarray:
    """Expand a per-step weight to the full horizon; full-horizon weights pass through."""
    W = np.atleast_2d(np.asarray(W, float))
    if W.shape == (dim, dim):
        return np.kron(np.eye(N_p), W)
    if W.shape == (dim * N_p, dim * N_p):
        return W
    raise DimensionError(f"weight of shape {W.shape} fits neither ({dim}, {dim}) nor the full horizon")


def _stack_ref(ref, dim: int, N_p: int) -> np.ndarray:
    ref = np.asarray(ref, float)
    if ref.size == dim:
        return np.tile(ref.reshape(-1), N_p)
    if ref.size == dim * N_p:
        return ref.reshape(-1)
    raise DimensionError(f"reference of size {ref.size} fits neither {dim} nor {dim * N_p}")


# --- QP assembly ----------------------------------------------------------------


class TrackingQP:
    """Cached assembly of the tracking problem

    ``min ||Y_f g - y_r||_Q^2 + ||U_f g - u_r||_R^2 + lambda_g ||g||^2``

    subject to ``U_p g = u_ini``, ``Y_p g = y_ini`` and boxes on ``U_f g``
    (and optionally ``Y_f g``). ``Q`` and ``R`` are per-step or full-horizon.
    """

    def __init__(self, blocks: HankelBlocks, Q, R, lambda_g: float = 0.0,
                 u_bounds: InputBounds | None = None, y_lo=None, y_hi=None):
        self.blocks = blocks
        n_u, n_y, N_p = blocks.n_u, blocks.n_z, blocks.N_p
        if blocks.U_f.shape[1] != blocks.Z_f.shape[1]:
            raise DimensionError("input and output blocks have different column counts")
        self.Qf = _block_weight(Q, n_y, N_p)
        self.Rf = _block_weight(R, n_u, N_p)
        U_f, Y_f = blocks.U_f, blocks.Z_f
        self.H = 2 * (Y_f.T @ self.Qf @ Y_f + U_f.T @ self.Rf @ U_f) + 2 * lambda_g * np.eye(blocks.n_g)
        self.A_eq = np.vstack([blocks.U_p, blocks.Z_p])
        rows, lo, hi = [], [], []
        if u_bounds is not None:
            rows.append(U_f)
            lo.append(np.tile(u_bounds.lo_arr, N_p))
            hi.append(np.tile(u_bounds.hi_arr, N_p))
        if y_lo is not None:
            rows.append(Y_f)
            lo.append(_stack_ref(y_lo, n_y, N_p))
            hi.append(_stack_ref(y_hi, n_y, N_p))
        self.A_box = np.vstack(rows) if rows else None
        self.lo = np.concatenate(lo) if rows else None
        self.hi = np.concatenate(hi) if rows else None

    def __call__(self, window: InitWindow, y_ref, u_ref) -> QPProblem:
        b = self.blocks
        yr = _stack_ref(y_ref, b.n_z, b.N_p)
        ur = _stack_ref(u_ref, b.n_u, b.N_p)
        f = -2 * (b.Z_f.T @ (self.Qf @ yr) + b.U_f.T @ (self.Rf @ ur))
        c0 = float(yr @ self.Qf @ yr + ur @ self.Rf @ ur)
        b_eq = np.concatenate([window.u_ini.reshape(-1), window.y_ini.reshape(-1)])
        return QPProblem(self.H, f, c0, self.A_eq, b_eq, self.A_box, self.lo, self.hi)


def build_tracking_qp(blocks: HankelBlocks, window: InitWindow, y_ref, u_ref, Q, R, lambda_g: float = 0.0,
                      u_bounds: InputBounds | None = None, y_lo=None, y_hi=None) -> QPProblem:
    """One-off tracking QP; see :class:`TrackingQP`."""
    return TrackingQP(blocks, Q, R, lambda_g, u_bounds, y_lo, y_hi)(window, y_ref, u_ref)


class EconQP:
    """Cached assembly of the economic problem over blocks ``(u_normalized, z)``.

    Objective (physical cost units, profit negated in profit mode)::

        sum_j beta * s * c_hat(z_j) + sum_j du_j' R du_j + lambda_g ||g||^2

    where ``c_hat`` is the model's surrogate in physical units, ``s = +1``
    for cost and ``-1`` for profit, ``du_0 = u_0 - u_prev`` and
    ``du_j = u_j - u_{j-1}``. With ``soften=True`` the window equality on
    ``z`` gets a slack ``s_z`` penalized by ``soft_penalty ||s_z||^2``.
    """

    def __init__(self, blocks: HankelBlocks, model: LiftingModel, config: ControllerConfig, soften: bool = False):
        if model.head.mode != config.mode:
            raise ValueError(
                f"cost head is in {model.head.mode!r} mode but the controller is configured for {config.mode!r}"
            )
        if blocks.n_z != model.n_z:
            raise DimensionError(f"blocks carry n_z={blocks.n_z}, model lifts to n_z={model.n_z}")
        if blocks.T_ini != config.T_ini or blocks.N_p != config.N_p:
            raise DimensionError("blocks and config disagree on T_ini/N_p")
        self.blocks, self.model, self.config, self.soften = blocks, model, config, soften
        n_u, n_z, N_p, n_g = blocks.n_u, blocks.n_z, blocks.N_p, blocks.n_g
        sc = model.scaling
        head = model.head
        s = 1.0 if config.mode == "cost" else -1.0
        self.R = config.R_for(n_u)
        D = _difference_operator(n_u, N_p)
        self.DU = D @ blocks.U_f
        Rf = np.kron(np.eye(N_p), self.R)
        # s * sign(head) = +1 in both modes, so the curvature enters as +exp(q)
        w = config.beta * sc.c_std
        Qd = np.tile(np.exp(head.q), N_p)
        H = 2 * (w * (blocks.Z_f.T * Qd) @ blocks.Z_f + self.DU.T @ Rf @ self.DU)
        H += 2 * config.lambda_g * np.eye(n_g)
        self._f_econ = s * w * (blocks.Z_f.T @ np.tile(head.P, N_p))
        self._c_econ = s * config.beta * N_p * (sc.c_mean + sc.c_std * head.b)
        self._RDU0 = Rf[:, :n_u]  # Rf @ E with E = [I; 0; ...]
        self.n_g = n_g
        self.n_slack = n_z * config.T_ini if soften else 0

        A_eq = np.vstack([blocks.U_p, blocks.Z_p])
        rows = [blocks.U_f]
        lo = [np.tile(sc.norm_u(config.bounds.lo_arr), N_p)] if config.bounds else []
        hi = [np.tile(sc.norm_u(config.bounds.hi_arr), N_p)] if config.bounds else []
        if not config.bounds:
            rows = []
        self.Y_rows = None
        if config.y_c_lo is not None:
            idx = list(model.constrained)
            if config.y_c_lo.size != len(idx):
                raise DimensionError(f"y_c bounds have {config.y_c_lo.size} entries, model constrains {len(idx)}")
            # physical reconstruction minus its offset: (I kron diag(y_std_c) G) Z_f
            Gp = model.scaling.y_std[idx][:, None] * model.G
            self.Y_rows = np.kron(np.eye(N_p), Gp) @ blocks.Z_f
            off = np.tile(model.scaling.y_mean[idx], N_p)
            rows.append(self.Y_rows)
            lo.append(np.tile(config.y_c_lo, N_p) - off)
            hi.append(np.tile(config.y_c_hi, N_p) - off)
        A_box = np.vstack(rows) if rows else np.zeros((0, n_g))
        if soften:
            k = self.n_slack
            H = np.block([[H, np.zeros((n_g, k))], [np.zeros((k, n_g)), 2 * config.soft_penalty * np.eye(k)]])
            slack = np.vstack([np.zeros((blocks.U_p.shape[0], k)), np.eye(k)])
            A_eq = np.hstack([A_eq, slack])
            A_box = np.hstack([A_box, np.zeros((A_box.shape[0], k))])
        self.H, self.A_eq, self.A_box = H, A_eq, A_box
        self.lo = np.concatenate(lo) if lo else np.zeros(0)
        self.hi = np.concatenate(hi) if hi else np.zeros(0)

    def __call__(self, window: InitWindow) -> QPProblem:
        sc = self.model.scaling
        u_prev = sc.norm_u(window.u_prev)
        f = self._f_econ - 2 * self.DU.T @ (self._RDU0 @ u_prev)
        c0 = self._c_econ + float(u_prev @ self.R @ u_prev)
        z_ini = self.model.lift(window.y_ini).reshape(-1)
        b_eq = np.concatenate([sc.norm_u(window.u_ini).reshape(-1), z_ini])
        if self.soften:
            f = np.concatenate([f, np.zeros(self.n_slack)])
        return QPProblem(self.H, f, c0, self.A_eq, b_eq, self.A_box, self.lo, self.hi)


def build_econ_qp(blocks: HankelBlocks, model: LiftingModel, window: InitWindow, config: ControllerConfig,
                  soften: bool = False) -> QPProblem:
    """One-off economic QP; see :class:`EconQP`."""
    return EconQP(blocks, model, config, soften)(window)


def extract_input(solution: QPSolution, U_f: np.ndarray, n_u: int, bounds: InputBounds | None = None):
    """Predicted input sequence ``U_f g*`` and its first block.

    The first block is clamped to ``bounds`` when given (same units as ``U_f``).

    Returns:
        ``(sequence, first)`` with ``sequence`` of shape ``(N_p, n_u)``.

    Raises:
        ControllerError: If the solver reported infeasibility or the iterate
            is not finite.
    """
    if solution.status == INFEASIBLE:
        raise ControllerError(
            f"QP infeasible after {solution.iterations} iterations "
            f"(primal residual {solution.primal_residual:.3g})", solution)
    g = solution.x[: U_f.shape[1]]
    if not np.all(np.isfinite(g)):
        raise ControllerError("QP iterate is not finite", solution)
    seq = (U_f @ g).reshape(-1, n_u)
    first = seq[0].copy() if bounds is None else bounds.clamp(seq[0])
    return seq, first


# --- controllers -----------------------------------------------------------------


@dataclass
class Decision:
    u: np.ndarray
    status: str
    iterations: int = 0
    solve_time: float = 0.0
    objective: float = float("nan")
    u_seq: np.ndarray | None = None
    y_c_pred: np.ndarray | None = None


class ConstantController:
    """Applies one fixed input; the reference baseline."""

    def __init__(self, u, T_ini: int = 1):
        self.u = np.asarray(u, float)
        self.T_ini = T_ini

    def act(self, window: InitWindow) -> Decision:
        return Decision(self.u.copy(), OPTIMAL, objective=0.0)


class _QPController:
    T_ini: int

    def __init__(self, tol: float, max_iters: int):
        self.solver = QPSolver(tol_p=tol, tol_d=tol, tol_c=tol, max_iters=max_iters)
        self._x_prev: np.ndarray | None = None

    def _warm_start(self, n: int) -> np.ndarray | None:
        if self._x_prev is None or self._x_prev.size != n:
            return None
        return self._x_prev

    def _solve(self, problem: QPProblem, solver: QPSolver | None = None) -> QPSolution:
        solver = solver or self.solver
        sol = solver.solve(problem, x0=self._warm_start(problem.n))
        if sol.status != INFEASIBLE and np.all(np.isfinite(sol.x)):
            self._x_prev = sol.x
        return sol


class TrackingController(_QPController):
    """Tracking DeePC toward fixed references ``(y_ref, u_ref)``."""

    def __init__(self, blocks: HankelBlocks, y_ref, u_ref, Q, R, lambda_g: float = 0.0,
                 bounds: InputBounds | None = None, y_lo=None, y_hi=None, tol: float = 1e-6,
                 max_iters: int = 20_000):
        super().__init__(tol, max_iters)
        self.blocks = blocks
        self.T_ini = blocks.T_ini
        self.qp = TrackingQP(blocks, Q, R, lambda_g, bounds, y_lo, y_hi)
        self.y_ref, self.u_ref, self.bounds = y_ref, u_ref, bounds

    def act(self, window: InitWindow) -> Decision:
        sol = self._solve(self.qp(window, self.y_ref, self.u_ref))
        try:
            seq, first = extract_input(sol, self.blocks.U_f, self.blocks.n_u, self.bounds)
        except ControllerError:
            logger.warning("tracking QP failed (%s); holding previous input", sol.status)
            return Decision(window.u_prev.copy(), FALLBACK, sol.iterations, sol.solve_time)
        return Decision(first, sol.status, sol.iterations, sol.solve_time, sol.objective, seq)


class EconomicController(_QPController):
    """Economic DeePC, full order or SVD-reduced.

    Args:
        blocks: Full-order blocks over ``(normalized u, z)``; see
            :func:`econ_blocks`.
        model: Trained lifting model (fixes scaling, lift and cost head).
        config: Controller settings; ``config.order == "reduced"`` replaces
            the blocks by their rank-``n_r`` factor.
    """

    def __init__(self, blocks: HankelBlocks, model: LiftingModel, config: ControllerConfig):
        super().__init__(config.tol, config.max_iters)
        if config.bounds is None:
            raise ValueError("the economic controller needs an input box")
        if config.order == "reduced":
            blocks = build_reduced(blocks, config.n_r, config.rank_rtol)
        self.blocks, self.model, self.config = blocks, model, config
        self.T_ini = config.T_ini
        self.qp = EconQP(blocks, model, config)
        self._soft_qp: EconQP | None = None
        self._soft_solver = QPSolver(tol_p=config.tol, tol_d=config.tol, tol_c=config.tol,
                                     max_iters=config.max_iters)
        self._soften_next = False
        sc = model.scaling
        self._nbounds = InputBounds(tuple(sc.norm_u(config.bounds.lo_arr)), tuple(sc.norm_u(config.bounds.hi_arr)))

    @property
    def n_g(self) -> int:
        return self.blocks.n_g

    def _soft(self) -> EconQP:
        if self._soft_qp is None:
            self._soft_qp = EconQP(self.blocks, self.model, self.config, soften=True)
        return self._soft_qp

    def act(self, window: InitWindow) -> Decision:
        soft = self._soften_next
        if soft:
            sol = self._solve(self._soft()(window), self._soft_solver)
        else:
            sol = self._solve(self.qp(window))
        try:
            seq_n, first_n = extract_input(sol, self.blocks.U_f, self.blocks.n_u, self._nbounds)
        except ControllerError as exc:
            logger.warning("economic QP failed (%s); holding previous input, softening next step", exc)
            self._soften_next = True
            return Decision(window.u_prev.copy(), FALLBACK, sol.iterations, sol.solve_time)
        self._soften_next = False
        sc = self.model.scaling
        u = self.config.bounds.clamp(sc.denorm_u(first_n))
        y_c = None
        if self.qp.Y_rows is not None and sol.status == OPTIMAL:
            g = sol.x[: self.n_g]
            y_c = self.model.reconstruct((self.blocks.Z_f @ g).reshape(-1, self.model.n_z))
        status = sol.status if not soft else f"{sol.status}-soft"
        return Decision(u, status, sol.iterations, sol.solve_time, sol.objective, sc.denorm_u(seq_n), y_c)


# --- closed loop -------------------------------------------------------------------


@dataclass
class SimResult:
    """Per-step closed-loop record."""

    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    profits: np.ndarray
    objectives: np.ndarray
    statuses: list[str]
    iterations: np.ndarray
    solve_times: np.ndarray
    y_c_pred: list = field(default_factory=list)
    seed: int = 0
    label: str = ""

    def __len__(self) -> int:
        return len(self.profits)

    @property
    def average_profit(self) -> float:
        return float(np.mean(self.profits))

    @property
    def total_solve_time(self) -> float:
        return float(np.sum(self.solve_times))

    @property
    def n_fallbacks(self) -> int:
        return sum(s == FALLBACK for s in self.statuses)

    def summary(self) -> dict:
        """Deterministic scalar summary (wall-clock timings excluded)."""
        counts = {s: self.statuses.count(s) for s in sorted(set(self.statuses))}
        return {
            "label": self.label,
            "seed": int(self.seed),
            "steps": len(self),
            "average_profit": repr(self.average_profit),
            "total_iterations": int(np.sum(self.iterations)),
            "statuses": counts,
        }

    COLUMNS_FIXED = ("step", "profit", "objective", "status", "iterations", "solve_time")

    def to_csv(self, path) -> None:
        n_x, n_y, n_u = self.states.shape[1], self.outputs.shape[1], self.inputs.shape[1]
        header = [*self.COLUMNS_FIXED[:1], *[f"x{i}" for i in range(n_x)], *[f"y{i}" for i in range(n_y)],
                  *[f"u{i}" for i in range(n_u)], *self.COLUMNS_FIXED[1:]]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self)):
                w.writerow([k, *map(repr, map(float, self.states[k])), *map(repr, map(float, self.outputs[k])),
                            *map(repr, map(float, self.inputs[k])), repr(float(self.profits[k])),
                            repr(float(self.objectives[k])), self.statuses[k], int(self.iterations[k]),
                            f"{self.solve_times[k]:.6f}"])


def closed_loop(plant, controller, steps: int, seed: int | None = 0, warmup_input=None,
                label: str = "") -> SimResult:
    """Run ``controller`` against ``plant`` for ``steps`` steps after a warmup.

    The warmup applies ``warmup_input`` (default: centre of the plant's input
    box) for ``T_ini`` steps to fill the initial window. Every applied input
    is clamped to the plant's box and asserted to lie in it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    plant.reset(seed)
    bounds: InputBounds = plant.bounds
    T_ini = controller.T_ini
    u_w = bounds.center if warmup_input is None else bounds.clamp(np.asarray(warmup_input, float))
    us, ys = [], []
    for _ in range(T_ini):
        us.append(u_w.copy())
        ys.append(plant.step(u_w))

    n_u, n_y = len(u_w), len(ys[-1])
    n_x = np.size(plant.x)
    X = np.empty((steps, n_x))
    Y = np.empty((steps, n_y))
    U = np.empty((steps, n_u))
    prof = np.empty(steps)
    obj = np.empty(steps)
    its = np.zeros(steps, dtype=int)
    times = np.zeros(steps)
    statuses, yc = [], []
    for k in range(steps):
        window = InitWindow(np.array(us[-T_ini:]), np.array(ys[-T_ini:]), us[-1])
        dec = controller.act(window)
        u = bounds.clamp(dec.u)
        if not bounds.contains(u):
            raise AssertionError(f"applied input {u} left the admissible box")
        y = plant.step(u)
        us.append(u)
        ys.append(y)
        X[k], Y[k], U[k] = plant.x, y, u
        prof[k] = float(plant.profit(u, y))
        obj[k] = dec.objective
        its[k], times[k] = dec.iterations, dec.solve_time
        statuses.append(dec.status)
        yc.append(dec.y_c_pred)
    return SimResult(X, Y, U, prof, obj, statuses, its, times, yc, seed if seed is not None else -1, label)


def standardized_weights(traj: Trajectory, rate_weight: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Tracking weights ``Q = diag(1/std(y)^2)`` and ``R = rate_weight * diag(1/std(u)^2)``.

    Standardizing by the data spread keeps channels with very different
    physical scales (temperatures, heat rates) comparably weighted.
    """
    def inv_var(a):
        s = a.std(axis=0)
        return 1.0 / np.where(s > 0, s, 1.0) ** 2

    return np.diag(inv_var(traj.outputs)), rate_weight * np.diag(inv_var(traj.inputs))


def make_controller(mode: str, traj: Trajectory, config: ControllerConfig, model: LiftingModel | None = None,
                    set_point=None, rate_weight: float = 0.1):
    """Controller factory used by the pipeline.

    Modes: ``econ``, ``econ-reduced``, ``tracking`` (needs
    ``set_point=(y_ref, u_ref)``) and ``constant`` (centre of the input box).
    """
    if mode == "constant":
        return ConstantController(config.bounds.center, config.T_ini)
    if mode == "tracking":
        if set_point is None:
            raise ValueError("tracking mode needs a set point (y_ref, u_ref)")
        Q, R = standardized_weights(traj, rate_weight)
        y_ref, u_ref = set_point
        return TrackingController(tracking_blocks(traj, config.T_ini, config.N_p), y_ref, u_ref, Q, R,
                                  config.lambda_g, config.bounds, tol=config.tol, max_iters=config.max_iters)
    if model is None:
        raise ValueError(f"mode {mode!r} needs a trained model")
    if mode in ("econ", "econ-reduced"):
        cfg = replace(config, order="reduced" if mode == "econ-reduced" else config.order)
        return EconomicController(econ_blocks(traj, model, config.T_ini, config.N_p), model, cfg)
    raise ValueError(f"unknown controller mode {mode!r}")


__all__ = [
    "ControllerConfig", "ControllerError", "InitWindow", "SimResult", "Decision", "TrackingQP", "EconQP",
    "build_tracking_qp", "build_econ_qp", "extract_input", "build_reduced", "tracking_blocks", "econ_blocks",
    "ConstantController", "TrackingController", "EconomicController", "closed_loop", "make_controller",
    "standardized_weights",
    "OPTIMAL", "INFEASIBLE", "MAX_ITERATIONS", "FALLBACK",
]
