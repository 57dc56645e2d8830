"""Trajectory containers and Hankel-matrix algebra.

All block matrices use time-major stacking: column ``j`` of a depth-``L``
Hankel matrix is ``[w[j]; w[j+1]; ...; w[j+L-1]]`` with every channel of
step ``j`` before any channel of step ``j+1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

RANK_RTOL = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with the requested operation."""


@dataclass
class Trajectory:
    """Input/output/cost record sampled every ``dt`` hours.

    Attributes:
        inputs: ``(T, n_u)`` array.
        outputs: ``(T, n_y)`` array.
        costs: ``(T,)`` array of realized stage costs (or profits).
        dt: Sampling period in hours.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    costs: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        self.inputs = _as_sequence(self.inputs)
        self.outputs = _as_sequence(self.outputs)
        self.costs = np.asarray(self.costs, dtype=float).reshape(-1)
        T = self.inputs.shape[0]
        if T < 1 or self.outputs.shape[0] != T or self.costs.shape[0] != T:
            raise DimensionError(
                f"inputs/outputs/costs lengths differ or are empty: "
                f"{self.inputs.shape[0]}, {self.outputs.shape[0]}, {self.costs.shape[0]}"
            )
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_y(self) -> int:
        return self.outputs.shape[1]

    def segment(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(
            self.inputs[start:stop], self.outputs[start:stop], self.costs[start:stop], self.dt
        )


@dataclass(frozen=True)
class HankelMatrix:
    data: np.ndarray
    block_dim: int
    depth: int

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def block(self, i: int, j: int) -> np.ndarray:
        m = self.block_dim
        return self.data[i * m : (i + 1) * m, j]


@dataclass(frozen=True)
class HankelBlocks:
    """Past/future partitions of an input and an output Hankel matrix."""

    U_p: np.ndarray
    U_f: np.ndarray
    Z_p: np.ndarray
    Z_f: np.ndarray
    T_ini: int
    N_p: int

    @property
    def n_g(self) -> int:
        return self.U_p.shape[1]

    @property
    def n_u(self) -> int:
        return self.U_p.shape[0] // self.T_ini

    @property
    def n_z(self) -> int:
        return self.Z_p.shape[0] // self.T_ini

    def stacked(self) -> np.ndarray:
        """``[U_p; U_f; Z_p; Z_f]``, i.e. the input Hankel stacked on the output Hankel."""
        return np.vstack([self.U_p, self.U_f, self.Z_p, self.Z_f])


@dataclass(frozen=True)
class ReducedHankel:
    """Rank-``n_r`` factor ``W_1 @ diag(s_1)`` of a stacked Hankel matrix.

    ``matrix @ right_factor.T`` reproduces the original matrix up to the
    discarded singular values.
    """

    matrix: np.ndarray
    n_r: int
    right_factor: np.ndarray
    singular_values: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.matrix @ self.right_factor.T


def _as_sequence(seq) -> np.ndarray:
    try:
        arr = np.asarray(seq, dtype=float)
    except ValueError as exc:
        raise DimensionError(f"inhomogeneous vector sizes in sequence: {exc}") from None
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"sequence must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def build_hankel(seq, L: int) -> HankelMatrix:
    """Depth-``L`` block Hankel matrix of a vector sequence.

    Args:
        seq: ``T`` vectors of equal dimension ``m`` (or ``T`` scalars).
        L: Depth, ``1 <= L <= T``.

    Returns:
        HankelMatrix with ``data`` of shape ``(m*L, T-L+1)``.

    Raises:
        DimensionError: If ``T < L`` or vector sizes differ.
    """
    w = _as_sequence(seq)
    T, m = w.shape
    if L < 1 or T < L:
        raise DimensionError(f"need 1 <= L <= T, got L={L}, T={T}")
    # windows: (T-L+1, m, L) -> (T-L+1, L, m) -> rows time-major
    win = sliding_window_view(w, L, axis=0).transpose(0, 2, 1)
    data = np.ascontiguousarray(win.reshape(T - L + 1, m * L).T)
    return HankelMatrix(data=data, block_dim=m, depth=L)


def hankel_adjoint(dH: np.ndarray, block_dim: int, depth: int) -> np.ndarray:
    """Adjoint of :func:`build_hankel` as a linear map.

    Given a matrix shaped like a Hankel matrix, sums every block that a given
    sample ``w[t]`` populates. Used to pull gradients back onto sequences.

    Returns:
        ``(T, block_dim)`` array with ``T = n_cols + depth - 1``.
    """
    m, L = block_dim, depth
    n_cols = dH.shape[1]
    out = np.zeros((n_cols + L - 1, m))
    for i in range(L):
        out[i : i + n_cols] += dH[i * m : (i + 1) * m].T
    return out


def partition_hankel(H_u: HankelMatrix, H_z: HankelMatrix, T_ini: int, N_p: int) -> HankelBlocks:
    """Split input and output Hankel matrices into past (``T_ini``) and future (``N_p``) rows."""
    L = T_ini + N_p
    if T_ini < 1 or N_p < 1:
        raise DimensionError(f"T_ini and N_p must be positive, got {T_ini}, {N_p}")
    if H_u.depth != L or H_z.depth != L:
        raise DimensionError(
            f"Hankel depths ({H_u.depth}, {H_z.depth}) differ from T_ini + N_p = {L}"
        )
    if H_u.n_cols != H_z.n_cols:
        raise DimensionError(f"column counts differ: {H_u.n_cols} vs {H_z.n_cols}")
    ru = H_u.block_dim * T_ini
    rz = H_z.block_dim * T_ini
    return HankelBlocks(
        U_p=H_u.data[:ru],
        U_f=H_u.data[ru:],
        Z_p=H_z.data[:rz],
        Z_f=H_z.data[rz:],
        T_ini=T_ini,
        N_p=N_p,
    )


def rank_threshold(s: np.ndarray, shape: tuple[int, int], rtol: float = RANK_RTOL) -> float:
    if s.size == 0:
        return 0.0
    return max(shape) * s[0] * rtol


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rank_threshold(s, M.shape, rtol)))


def is_persistently_exciting(seq, L: int) -> tuple[bool, int]:
    """Check whether ``seq`` is persistently exciting of order ``L``.

    Returns:
        ``(full_row_rank, achieved_rank)`` for the depth-``L`` Hankel matrix.
    """
    H = build_hankel(seq, L)
    rank = numerical_rank(H.data)
    return rank == H.data.shape[0], rank


def pseudo_inverse(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse through the SVD."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    W, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > rank_threshold(s, M.shape, rtol)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ W.T


def reduce_hankel(stacked: np.ndarray, n_r: int | None = None, rtol: float = RANK_RTOL) -> ReducedHankel:
    """Replace a stacked Hankel matrix by its leading left factor ``W_1 Σ_1``.

    Args:
        stacked: ``[H_L(u); H_L(z)]``.
        n_r: Number of singular values to keep. When omitted, keeps every
            singular value above the relative tolerance.
        rtol: Relative rank tolerance used when ``n_r`` is None and to
            determine the achievable rank.

    Raises:
        DimensionError: If ``n_r`` exceeds the numerical rank.
    """
    stacked = np.asarray(stacked, dtype=float)
    W, s, Vt = np.linalg.svd(stacked, full_matrices=False)
    rank = int(np.sum(s > rank_threshold(s, stacked.shape, rtol)))
    if n_r is None:
        n_r = rank
    if n_r < 1 or n_r > rank:
        raise DimensionError(f"requested n_r={n_r} but achievable rank is {rank}")
    return ReducedHankel(
        matrix=W[:, :n_r] * s[:n_r],
        n_r=n_r,
        right_factor=Vt[:n_r].T,
        singular_values=s[:n_r].copy(),
    )
