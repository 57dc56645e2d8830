"""Ground-truth simulators: two CSTRs in series and an LTI sandbox.

CSTR state ``x = [C_A1, T1, C_A2, T2]`` and input
``u = [C_A10, Q1, C_A20, Q2]``. Both reactors run the irreversible second
order reaction A -> B with Arrhenius rate ``k0 exp(-E/(R T)) C_A^2``:

    dC_A1/dt = F1/V1 (C_A10 - C_A1) - r1
    dT1/dt   = F1/V1 (T10 - T1) + (-dH)/(rho Cp) r1 + Q1/(rho Cp V1)
    dC_A2/dt = (F1 C_A1 + F2 C_A20 - (F1 + F2) C_A2)/V2 - r2
    dT2/dt   = (F1 T1 + F2 T20 - (F1 + F2) T2)/V2 + (-dH)/(rho Cp) r2 + Q2/(rho Cp V2)

Parameter values are never hard-coded here; they come from the experiment
config (see ``data/default_config.yaml``).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

logger = logging.getLogger(__name__)

N_Y = 4
N_U = 4
CONC = np.array([0, 2])  # concentration channels of the state
TEMP = np.array([1, 3])


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class CstrParams:
    V1: float
    V2: float
    F1: float
    F2: float
    T10: float
    T20: float
    k0: float
    E: float
    R: float
    dH: float
    rho: float
    Cp: float

    def __post_init__(self) -> None:
        for name in ("V1", "V2", "F1", "F2", "T10", "T20", "k0", "R", "rho", "Cp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"CstrParams.{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, d: dict) -> "CstrParams":
        names = {f.name for f in fields(cls)}
        missing = names - d.keys()
        if missing:
            raise ValueError(f"missing CSTR parameters: {sorted(missing)}")
        return cls(**{k: float(d[k]) for k in names})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class InputBounds:
    """The admissible input box, ordered like the input vector."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi):
            raise ValueError("bound vectors differ in length")
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError(f"empty input box: lo={self.lo}, hi={self.hi}")

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_arr + self.hi_arr)

    @property
    def halfwidth(self) -> np.ndarray:
        return 0.5 * (self.hi_arr - self.lo_arr)

    def contains(self, u: np.ndarray) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.lo_arr) and np.all(u <= self.hi_arr))

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lo_arr, self.hi_arr)


CSTR_INPUT_BOUNDS = InputBounds(lo=(1.5, -1e4, 1.5, -1e4), hi=(6.5, 1e5, 6.5, 1e5))


@dataclass(frozen=True)
class NoiseConfig:
    """Clipped Gaussian process disturbances, one draw per channel per period."""

    conc_std: float = 0.01
    conc_clip: float = 1.0
    temp_std: float = 1.0
    temp_clip: float = 50.0
    seed: int = 0
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.conc_std < 0 or self.temp_std < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not (self.conc_clip > 0 and self.temp_clip > 0):
            raise ValueError("noise clip bounds must be positive")

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """One disturbance vector for the 4-dimensional CSTR state."""
        d = np.empty(N_Y)
        d[CONC] = np.clip(rng.normal(0.0, self.conc_std, 2), -self.conc_clip, self.conc_clip)
        d[TEMP] = np.clip(rng.normal(0.0, self.temp_std, 2), -self.temp_clip, self.temp_clip)
        return d


def _rate(p: CstrParams, C, T):
    return p.k0 * np.exp(-p.E / (p.R * T)) * C**2


def cstr_derivative(x: np.ndarray, u: np.ndarray, p: CstrParams) -> np.ndarray:
    """Time derivative of ``[C_A1, T1, C_A2, T2]`` (per hour)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SimulationDiverged(f"non-finite CSTR state {x}")
    C1, T1, C2, T2 = x
    CA10, Q1, CA20, Q2 = u
    r1 = _rate(p, C1, T1)
    r2 = _rate(p, C2, T2)
    heat = -p.dH / (p.rho * p.Cp)
    F_out = p.F1 + p.F2
    return np.array(
        [
            p.F1 / p.V1 * (CA10 - C1) - r1,
            p.F1 / p.V1 * (p.T10 - T1) + heat * r1 + Q1 / (p.rho * p.Cp * p.V1),
            (p.F1 * C1 + p.F2 * CA20 - F_out * C2) / p.V2 - r2,
            (p.F1 * T1 + p.F2 * p.T20 - F_out * T2) / p.V2 + heat * r2 + Q2 / (p.rho * p.Cp * p.V2),
        ]
    )


def rk4(x: np.ndarray, u: np.ndarray, p: CstrParams, dt: float, n_sub: int = 10) -> np.ndarray:
    h = dt / n_sub
    for _ in range(n_sub):
        k1 = cstr_derivative(x, u, p)
        k2 = cstr_derivative(x + 0.5 * h * k1, u, p)
        k3 = cstr_derivative(x + 0.5 * h * k2, u, p)
        k4 = cstr_derivative(x + h * k3, u, p)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def step(
    x: np.ndarray,
    u: np.ndarray,
    p: CstrParams,
    dt: float,
    noise: NoiseConfig | None = None,
    rng: np.random.Generator | None = None,
    n_sub: int = 10,
    bounds: InputBounds = CSTR_INPUT_BOUNDS,
) -> np.ndarray:
    """Advance the CSTR pair by one sampling period.

    Out-of-box inputs are clamped (with a warning). The disturbance, if any,
    is added after integration and concentrations are clamped at zero.
    """
    u = np.asarray(u, dtype=float)
    if not bounds.contains(u):
        logger.warning("input %s outside admissible box; clamping", u)
        u = bounds.clamp(u)
    x_next = rk4(np.asarray(x, dtype=float), u, p, dt, n_sub) if dt > 0 else np.array(x, dtype=float)
    if noise is not None and noise.enabled:
        if rng is None:
            raise ValueError("a random generator is required when noise is enabled")
        x_next = x_next + noise.draw(rng)
    x_next[CONC] = np.maximum(x_next[CONC], 0.0)
    if not np.all(np.isfinite(x_next)):
        raise SimulationDiverged(f"non-finite CSTR state after step: {x_next}")
    return x_next


def output(x: np.ndarray) -> np.ndarray:
    """Measured output; every state is measured."""
    return np.array(x, dtype=float)


def stage_profit(u, y, p: CstrParams):
    """Economic profit ``k0 e^{-E/(R T1)} C_A1^2 + k0 e^{-E/(R T2)} C_A2^2``.

    ``u`` is accepted for interface symmetry; the profit depends on outputs
    only. Works row-wise on ``(..., 4)`` output arrays.
    """
    y = np.asarray(y, dtype=float)
    T1, T2 = y[..., 1], y[..., 3]
    if np.any(T1 <= 0) or np.any(T2 <= 0):
        raise ValueError("reactor temperatures must be positive")
    return _rate(p, y[..., 0], T1) + _rate(p, y[..., 2], T2)


def steady_state(u: np.ndarray, p: CstrParams, x0: np.ndarray, horizon: float = 20.0, dt: float = 0.025) -> np.ndarray:
    """Integrate with constant input until the state settles."""
    x = np.asarray(x0, dtype=float)
    for _ in range(int(round(horizon / dt))):
        x = rk4(x, u, p, dt)
    return x


# --- LTI sandbox -----------------------------------------------------------


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("non-conformal LTI matrices")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError("D must be n_y x n_u")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def controllability_matrix(self) -> np.ndarray:
        blocks = [self.B]
        for _ in range(self.n_x - 1):
            blocks.append(self.A @ blocks[-1])
        return np.hstack(blocks)

    def is_controllable(self) -> bool:
        return np.linalg.matrix_rank(self.controllability_matrix()) == self.n_x


def lti_step(sys: LtiSystem, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (sys.n_x,) or u.shape != (sys.n_u,):
        raise ValueError(f"shape mismatch: x {x.shape}, u {u.shape} for system {sys.n_x}x{sys.n_u}")
    return sys.A @ x + sys.B @ u, sys.C @ x + sys.D @ u


def lti_rollout(sys: LtiSystem, x0: np.ndarray, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simulate from ``x0``; returns ``(outputs (T, n_y), final state)``."""
    inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
    x = np.asarray(x0, dtype=float)
    ys = np.empty((len(inputs), sys.n_y))
    for k, u in enumerate(inputs):
        x, ys[k] = lti_step(sys, x, u)
    return ys, x


def random_lti(rng: np.random.Generator, n_x: int = 3, n_u: int = 2, n_y: int = 2,
               spectral_radius: float = 0.8, feedthrough: bool = False) -> LtiSystem:
    """Random stable, controllable LTI system."""
    while True:
        A = rng.normal(size=(n_x, n_x))
        A *= spectral_radius / max(abs(np.linalg.eigvals(A)))
        B = rng.normal(size=(n_x, n_u))
        C = rng.normal(size=(n_y, n_x))
        D = rng.normal(size=(n_y, n_u)) if feedthrough else np.zeros((n_y, n_u))
        sys = LtiSystem(A, B, C, D)
        if sys.is_controllable():
            return sys


# --- stateful wrappers used by data generation and the closed loop ---------


class CstrPlant:
    """Two-CSTR process with seeded disturbances and the profit as stage cost."""

    n_u = N_U
    n_y = N_Y

    def __init__(self, params: CstrParams, noise: NoiseConfig, x0, dt: float = 0.025,
                 n_sub: int = 10, bounds: InputBounds = CSTR_INPUT_BOUNDS):
        self.params = params
        self.noise = noise
        self.x0 = np.asarray(x0, dtype=float)
        self.dt = dt
        self.n_sub = n_sub
        self.bounds = bounds
        self.reset(noise.seed)

    def reset(self, seed: int | None = None, x0=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.x = np.array(self.x0 if x0 is None else x0, dtype=float)
        return output(self.x)

    def step(self, u) -> np.ndarray:
        self.x = step(self.x, u, self.params, self.dt, self.noise, self.rng, self.n_sub, self.bounds)
        return output(self.x)

    def profit(self, u, y):
        return stage_profit(u, y, self.params)


class LtiPlant:
    """LTI sandbox plant with an optional stage-cost callable ``cost(u, y)``."""

    def __init__(self, sys: LtiSystem, bounds: InputBounds, x0=None, cost=None, dt: float = 1.0):
        self.sys = sys
        self.bounds = bounds
        self.x0 = np.zeros(sys.n_x) if x0 is None else np.asarray(x0, dtype=float)
        self.cost = cost
        self.dt = dt
        self.reset()

    @property
    def n_u(self) -> int:
        return self.sys.n_u

    @property
    def n_y(self) -> int:
        return self.sys.n_y

    def reset(self, seed: int | None = None, x0=None) -> np.ndarray:
        self.x = np.array(self.x0 if x0 is None else x0, dtype=float)
        # output reported after a step is y_k = C x_k + D u_k for the applied u_k
        return self.sys.C @ self.x

    def step(self, u) -> np.ndarray:
        self.x, y = lti_step(self.sys, self.x, u)
        return y

    def profit(self, u, y):
        if self.cost is None:
            return np.zeros(np.shape(y)[:-1]) if np.ndim(y) > 1 else 0.0
        return self.cost(u, y)
