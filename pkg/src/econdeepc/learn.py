"""Learned output lifting, quadratic economic-cost head and reconstruction matrix.

Everything here is plain numpy: forward passes, hand-written reverse-mode
gradients of the composite loss, and an Adam optimizer. Training works on
standardized data; the :class:`Scaling` record travels with the model so the
controller sees physical units at its boundary.

Parameter dictionaries use the keys ``W0, b0, W1, b1, ...`` for the network
layers followed by ``q``, ``P``, ``b`` (cost head) and ``G`` (reconstruction).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .trajkit import DimensionError, build_hankel, hankel_adjoint, pseudo_inverse

logger = logging.getLogger(__name__)

SCHEMA = "econdeepc.lifting/1"
MODES = ("cost", "profit")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: "LiftingModel | None" = None):
        super().__init__(message)
        self.last_good = last_good


class CheckpointError(ValueError):
    pass


# --- building blocks -------------------------------------------------------


@dataclass
class Scaling:
    """Affine maps between physical and training units."""

    u_offset: np.ndarray
    u_scale: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    c_mean: float = 0.0
    c_std: float = 1.0

    @classmethod
    def identity(cls, n_u: int, n_y: int) -> "Scaling":
        return cls(np.zeros(n_u), np.ones(n_u), np.zeros(n_y), np.ones(n_y))

    @classmethod
    def fit(cls, inputs: np.ndarray, outputs: np.ndarray, costs: np.ndarray) -> "Scaling":
        def safe_std(a):
            s = a.std(axis=0)
            return np.where(s > 0, s, 1.0)

        return cls(
            inputs.mean(axis=0), safe_std(inputs), outputs.mean(axis=0), safe_std(outputs),
            float(costs.mean()), float(safe_std(costs.reshape(-1, 1))[0]),
        )

    def norm_u(self, u):
        return (np.asarray(u) - self.u_offset) / self.u_scale

    def denorm_u(self, un):
        return np.asarray(un) * self.u_scale + self.u_offset

    def norm_y(self, y):
        return (np.asarray(y) - self.y_mean) / self.y_std

    def norm_c(self, c):
        return (np.asarray(c) - self.c_mean) / self.c_std

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaling":
        return cls(
            np.asarray(d["u_offset"], float), np.asarray(d["u_scale"], float),
            np.asarray(d["y_mean"], float), np.asarray(d["y_std"], float),
            float(d["c_mean"]), float(d["c_std"]),
        )


class TransformNet:
    """Fully connected ReLU network; the output layer is linear.

    ``weights[i]`` has shape ``(fan_in, fan_out)`` so a batch ``X`` of shape
    ``(N, n_in)`` maps as ``relu(X @ W + b)``.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise DimensionError("need matching, non-empty weight and bias lists")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if b.shape != (W.shape[1],):
                raise DimensionError(f"layer {i}: bias shape {b.shape} vs weight {W.shape}")
            if i and weights[i - 1].shape[1] != W.shape[0]:
                raise DimensionError(f"layer {i}: fan-in {W.shape[0]} != previous fan-out {weights[i-1].shape[1]}")
        self.weights = [np.asarray(W, float) for W in weights]
        self.biases = [np.asarray(b, float) for b in biases]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "TransformNet":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        return cls(weights, biases)

    @classmethod
    def linear(cls, W: np.ndarray, b: np.ndarray | None = None) -> "TransformNet":
        """Single linear layer ``z = W y + b`` (``W`` given as ``(n_z, n_y)``)."""
        W = np.asarray(W, float)
        return cls([W.T.copy()], [np.zeros(W.shape[0]) if b is None else np.asarray(b, float)])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, X: np.ndarray, keep: bool = False):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            if keep:
                acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], dout: np.ndarray):
        """Gradients w.r.t. weights and biases given ``dL/dout`` and cached activations."""
        dWs, dbs = [None] * len(self.weights), [None] * len(self.weights)
        d = dout
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                d = d * (acts[i + 1] > 0)
            dWs[i] = acts[i].T @ d
            dbs[i] = d.sum(axis=0)
            if i:
                d = d @ self.weights[i].T
        return dWs, dbs


@dataclass
class CostHead:
    """Quadratic surrogate ``z' diag(±exp q) z + P z + b``.

    ``mode="cost"`` gives a positive-definite curvature (a convex cost);
    ``mode="profit"`` a negative-definite one (a concave profit).
    """

    q: np.ndarray
    P: np.ndarray
    b: float = 0.0
    mode: str = "cost"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.q = np.asarray(self.q, float)
        self.P = np.asarray(self.P, float).reshape(-1)
        self.b = float(self.b)
        if self.P.shape != self.q.shape:
            raise DimensionError(f"q {self.q.shape} and P {self.P.shape} differ")

    @classmethod
    def zeros(cls, n_z: int, mode: str = "cost") -> "CostHead":
        return cls(np.zeros(n_z), np.zeros(n_z), 0.0, mode)

    @property
    def sign(self) -> float:
        return 1.0 if self.mode == "cost" else -1.0

    @property
    def curvature(self) -> np.ndarray:
        """Diagonal of the quadratic-form matrix."""
        return self.sign * np.exp(self.q)

    def __call__(self, z):
        return approx_cost(self, z)


@dataclass
class LiftingModel:
    net: TransformNet
    head: CostHead
    G: np.ndarray
    scaling: Scaling
    constrained: tuple[int, ...]
    fingerprint: str = ""

    @property
    def n_z(self) -> int:
        return self.net.n_out

    @property
    def n_y(self) -> int:
        return self.net.n_in

    def lift(self, y) -> np.ndarray:
        """Physical outputs (one vector or rows of a batch) to lifted coordinates."""
        return lift(self.net, self.scaling.norm_y(y))

    def predicted_cost(self, z):
        """Surrogate stage cost (or profit) in physical units."""
        return self.scaling.c_mean + self.scaling.c_std * approx_cost(self.head, z)

    def reconstruct(self, z) -> np.ndarray:
        """Physical values of the constrained outputs."""
        idx = list(self.constrained)
        return self.scaling.y_mean[idx] + self.scaling.y_std[idx] * reconstruct(self.G, z)

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, (W, b) in enumerate(zip(self.net.weights, self.net.biases)):
            p[f"W{i}"], p[f"b{i}"] = W, b
        p.update(q=self.head.q, P=self.head.P, b=np.array(self.head.b), G=self.G)
        return p

    def with_params(self, p: dict[str, np.ndarray]) -> "LiftingModel":
        n = len(self.net.weights)
        net = TransformNet([p[f"W{i}"].copy() for i in range(n)], [p[f"b{i}"].copy() for i in range(n)])
        head = CostHead(p["q"].copy(), p["P"].copy(), float(p["b"]), self.head.mode)
        return replace(self, net=net, head=head, G=p["G"].copy())


# --- forward operations ----------------------------------------------------


def lift(net: TransformNet, y) -> np.ndarray:
    y = np.asarray(y, float)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite network input")
    if y.shape[-1] != net.n_in:
        raise DimensionError(f"expected {net.n_in} output channels, got {y.shape[-1]}")
    flat = y.reshape(-1, net.n_in)
    return net.forward(flat).reshape(*y.shape[:-1], net.n_out)


def approx_cost(head: CostHead, z):
    z = np.asarray(z, float)
    return (z * z) @ head.curvature + z @ head.P + head.b


def reconstruct(G: np.ndarray, z) -> np.ndarray:
    z = np.asarray(z, float)
    if z.shape[-1] != G.shape[1]:
        raise DimensionError(f"G is {G.shape}, z has {z.shape[-1]} entries")
    return z @ G.T


def loss_econ(head: CostHead, z, c) -> float:
    """Mean squared error between surrogate and realized costs."""
    c = np.asarray(c, float)
    if c.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((approx_cost(head, z) - c) ** 2))


def loss_recon(G: np.ndarray, z, yc) -> float:
    """Mean over samples of the squared reconstruction error norm."""
    yc = np.asarray(yc, float)
    if yc.size == 0:
        raise ValueError("empty batch")
    r = yc - reconstruct(G, z)
    return float(np.sum(r * r) / (r.size // r.shape[-1]))


def lemma_coefficients(u_T, u_L, L: int, Hu_pinv: np.ndarray | None = None) -> np.ndarray:
    """``g = H_L(u_T)^+ u_L`` for a batch of windows ``u_L`` of shape ``(B, L, n_u)``."""
    if Hu_pinv is None:
        Hu_pinv = pseudo_inverse(build_hankel(u_T, L).data)
    u_L = np.asarray(u_L, float)
    return u_L.reshape(u_L.shape[0], -1) @ Hu_pinv.T


def linear_residuals(z_T: np.ndarray, z_L: np.ndarray, g: np.ndarray, L: int) -> np.ndarray:
    """``z_L - H_L(z_T) g`` per window, shape ``(B, n_z * L)``."""
    HZ = build_hankel(z_T, L).data
    return z_L.reshape(z_L.shape[0], -1) - g @ HZ.T


def loss_linear(net: TransformNet, y_T, u_T, y_L, u_L, L: int) -> float:
    """Violation of the fundamental-lemma relation in lifted coordinates, averaged over windows."""
    y_L = np.asarray(y_L, float)
    if y_L.ndim == 2:
        y_L, u_L = y_L[None], np.asarray(u_L, float).reshape(1, L, -1)
    g = lemma_coefficients(u_T, u_L, L)
    r = linear_residuals(lift(net, y_T), lift(net, y_L), g, L)
    return float(np.mean(np.sum(r * r, axis=1)))


# --- composite loss with gradients -----------------------------------------


@dataclass
class Batch:
    """Normalized training data for one loss evaluation.

    ``y_T``/``c_T``/``yc_T`` describe the Hankel trajectory; ``y_L`` etc. are
    ``(B, L, ·)`` windows with their lemma coefficients ``g`` ``(B, n_g)``.
    """

    y_T: np.ndarray
    c_T: np.ndarray
    yc_T: np.ndarray
    y_L: np.ndarray
    c_L: np.ndarray
    yc_L: np.ndarray
    g: np.ndarray

    @property
    def L(self) -> int:
        return self.y_L.shape[1]

    def take(self, idx) -> "Batch":
        return replace(self, y_L=self.y_L[idx], c_L=self.c_L[idx], yc_L=self.yc_L[idx], g=self.g[idx])


def _net_from(p: dict, n_layers: int) -> TransformNet:
    return TransformNet([p[f"W{i}"] for i in range(n_layers)], [p[f"b{i}"] for i in range(n_layers)])


def n_layers_of(p: dict) -> int:
    return sum(1 for k in p if k.startswith("W"))


def total_loss(p: dict, batch: Batch, alphas, mode: str = "cost", grad: bool = False):
    """Weighted composite loss ``a1*L_e + a2*L_re + a3*L_linear``.

    Returns ``(loss, parts)`` or, with ``grad=True``, ``(loss, parts, grads)``
    where ``grads`` mirrors the keys of ``p``.
    """
    a1, a2, a3 = (float(a) for a in alphas)
    nl = n_layers_of(p)
    net = _net_from(p, nl)
    head = CostHead(p["q"], p["P"], float(p["b"]), mode)
    G = p["G"]
    B, L, n_y = batch.y_L.shape
    T = batch.y_T.shape[0]

    zT, actsT = net.forward(batch.y_T, keep=True)
    zLf, actsL = net.forward(batch.y_L.reshape(B * L, n_y), keep=True)
    n_z = zT.shape[1]
    cLf = batch.c_L.reshape(-1)
    ycLf = batch.yc_L.reshape(B * L, -1)

    eT = approx_cost(head, zT) - batch.c_T
    eL = approx_cost(head, zLf) - cLf
    Le = float(np.mean(eT**2) + np.mean(eL**2))

    rT = batch.yc_T - zT @ G.T
    rL = ycLf - zLf @ G.T
    Lre = float(np.sum(rT**2) / T + np.sum(rL**2) / (B * L))

    HZ = build_hankel(zT, L).data
    res = zLf.reshape(B, L * n_z) - batch.g @ HZ.T
    Llin = float(np.sum(res**2) / B)

    loss = a1 * Le + a2 * Lre + a3 * Llin
    parts = {"econ": Le, "recon": Lre, "linear": Llin}
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss components {parts}")
    if not grad:
        return loss, parts

    curv = head.curvature
    gr = {}
    # economic head
    wT, wL = a1 * 2.0 / T * eT, a1 * 2.0 / (B * L) * eL
    dzT = wT[:, None] * (2.0 * curv * zT + head.P)
    dzL = wL[:, None] * (2.0 * curv * zLf + head.P)
    gr["q"] = curv * (wT @ zT**2 + wL @ zLf**2)
    gr["P"] = wT @ zT + wL @ zLf
    gr["b"] = np.array(wT.sum() + wL.sum())
    # reconstruction
    kT, kL = a2 * 2.0 / T, a2 * 2.0 / (B * L)
    gr["G"] = -(kT * rT.T @ zT + kL * rL.T @ zLf)
    dzT -= kT * rT @ G
    dzL -= kL * rL @ G
    # lemma residual, including the path through the lifted Hankel matrix
    k = a3 * 2.0 / B
    dzL += k * res.reshape(B * L, n_z)
    dHZ = -k * res.T @ batch.g
    dzT += hankel_adjoint(dHZ, n_z, L)

    dWT, dbT = net.backward(actsT, dzT)
    dWL, dbL = net.backward(actsL, dzL)
    for i in range(nl):
        gr[f"W{i}"] = dWT[i] + dWL[i]
        gr[f"b{i}"] = dbT[i] + dbL[i]
        if not (np.all(np.isfinite(gr[f"W{i}"])) and np.all(np.isfinite(gr[f"b{i}"]))):
            raise FloatingPointError(f"non-finite gradient in network layer {i}")
    return loss, parts, gr


def gradients(p: dict, batch: Batch, alphas, mode: str = "cost") -> dict[str, np.ndarray]:
    return total_loss(p, batch, alphas, mode, grad=True)[2]


def _relu_pattern(p: dict, batch: Batch) -> np.ndarray:
    net = _net_from(p, n_layers_of(p))
    X = np.vstack([batch.y_T, batch.y_L.reshape(-1, batch.y_L.shape[-1])])
    _, acts = net.forward(X, keep=True)
    return np.concatenate([(a > 0).ravel() for a in acts[1:-1]]) if len(acts) > 2 else np.zeros(0, bool)


def check_gradients(p: dict, batch: Batch, alphas, mode: str = "cost", n_probe: int = 100,
                    rng: np.random.Generator | None = None, step: float = 1e-5, keys=None,
                    max_redraws: int = 1000) -> dict:
    """Compare analytic gradients against central differences on random coordinates.

    The finite-difference step for a coordinate ``t`` is ``step * (1 + |t|)``.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``. A coordinate whose
    perturbation flips any ReLU on the batch is not differentiable at that
    scale; it is redrawn and counted in ``skipped_kinks``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grads = gradients(p, batch, alphas, mode)
    keys = list(p) if keys is None else list(keys)
    sizes = np.array([p[k].size for k in keys])
    worst, records, skipped = 0.0, [], 0
    while len(records) < n_probe:
        k = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        i = int(rng.integers(p[k].size))
        orig = p[k].reshape(-1)[i].copy()
        h = step * (1.0 + abs(orig))
        work = {kk: vv.copy() for kk, vv in p.items()}
        flat = work[k].reshape(-1)
        flat[i] = orig + h
        fp = total_loss(work, batch, alphas, mode)[0]
        pat_p = _relu_pattern(work, batch) if k[0] in "Wb" and k != "b" else None
        flat[i] = orig - h
        fm = total_loss(work, batch, alphas, mode)[0]
        if pat_p is not None and not np.array_equal(pat_p, _relu_pattern(work, batch)):
            skipped += 1
            if skipped > max_redraws:
                raise RuntimeError("too many probes straddle ReLU kinks")
            continue
        num = (fp - fm) / (2 * h)
        ana = float(grads[k].reshape(-1)[i])
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, rel)
        records.append((k, i, ana, num, rel))
    return {"max_rel_error": worst, "probes": records, "skipped_kinks": skipped}


# --- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``batch_size`` counts time-step samples, so a minibatch holds
    ``round(batch_size / L)`` windows (at least one). ``lr_schedule`` is
    ``"constant"`` or ``"cosine"`` (annealed per epoch from ``lr`` to
    ``lr_min``). ``constrained`` lists the output channels reconstructed by
    ``G``; ``None`` means all of them.
    """

    alphas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    lr_schedule: str = "constant"
    lr_min: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: tuple[int, ...] = (128, 128)
    n_z: int = 10
    mode: str = "profit"
    constrained: tuple[int, ...] | None = None
    normalize: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.alphas = tuple(float(a) for a in self.alphas)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.constrained is not None:
            self.constrained = tuple(int(i) for i in self.constrained)
        if len(self.alphas) != 3 or min(self.alphas) < 0 or max(self.alphas) == 0:
            raise ValueError(f"loss weights must be non-negative and not all zero, got {self.alphas}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown training options: {sorted(extra)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v, dtype=float) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=float) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "train", "val", "val_econ", "val_recon", "val_linear")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join(repr(r[c]) if c != "epoch" else str(r[c]) for c in self.COLUMNS) + "\n")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


def make_batch(scaling: Scaling, constrained, hankel_traj, u_L, y_L, c_L, Hu_pinv) -> Batch:
    idx = list(constrained)
    yT = scaling.norm_y(hankel_traj.outputs)
    yL = scaling.norm_y(y_L)
    L = y_L.shape[1]
    g = lemma_coefficients(None, scaling.norm_u(u_L), L, Hu_pinv)
    return Batch(
        y_T=yT, c_T=scaling.norm_c(hankel_traj.costs), yc_T=yT[:, idx],
        y_L=yL, c_L=scaling.norm_c(c_L), yc_L=yL[..., idx], g=g,
    )


def windows_per_batch(batch_size: int, L: int) -> int:
    """``batch_size`` counts time-step samples; minibatches hold whole ``L``-step windows."""
    return max(1, int(round(batch_size / L)))


def train(dataset, config: TrainConfig, log_every: int = 0) -> tuple[LiftingModel, History]:
    """Minibatch Adam on the composite loss; returns the best-validation model."""
    if not dataset.tags:
        raise ValueError("dataset has no train/val/test split")
    rng = np.random.default_rng(config.seed)
    ht = dataset.hankel_traj
    L = dataset.L
    uL_tr, yL_tr, cL_tr = dataset.stacked("train")
    uL_va, yL_va, cL_va = dataset.stacked("val")
    n_u, n_y = ht.n_u, ht.n_y
    constrained = tuple(range(n_y)) if config.constrained is None else config.constrained

    if config.normalize:
        scaling = Scaling.fit(
            np.vstack([ht.inputs, uL_tr.reshape(-1, n_u)]),
            np.vstack([ht.outputs, yL_tr.reshape(-1, n_y)]),
            np.concatenate([ht.costs, cL_tr.reshape(-1)]),
        )
    else:
        scaling = Scaling.identity(n_u, n_y)

    Hu_pinv = pseudo_inverse(build_hankel(scaling.norm_u(ht.inputs), L).data)
    tr = make_batch(scaling, constrained, ht, uL_tr, yL_tr, cL_tr, Hu_pinv)
    va = make_batch(scaling, constrained, ht, uL_va, yL_va, cL_va, Hu_pinv)

    net = TransformNet.init([n_y, *config.hidden, config.n_z], rng)
    zs = lift(net, np.vstack([tr.y_T, tr.y_L.reshape(-1, n_y)]))
    ycs = np.vstack([tr.yc_T, tr.yc_L.reshape(-1, len(constrained))])
    G0 = np.linalg.lstsq(zs, ycs, rcond=None)[0].T
    model = LiftingModel(net, CostHead.zeros(config.n_z, config.mode), G0, scaling, constrained,
                         config.fingerprint())
    params = {k: np.array(v, dtype=float) for k, v in model.params().items()}
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)

    history = History()
    best_val, best_params = np.inf, {k: v.copy() for k, v in params.items()}
    n_tr = tr.y_L.shape[0]
    per_batch = windows_per_batch(config.batch_size, L)
    for epoch in range(1, config.epochs + 1):
        if config.lr_schedule == "cosine":
            frac = (epoch - 1) / max(config.epochs - 1, 1)
            opt.lr = config.lr_min + 0.5 * (config.lr - config.lr_min) * (1 + np.cos(np.pi * frac))
        perm = rng.permutation(n_tr)
        batch_losses = []
        for start in range(0, n_tr, per_batch):
            mb = tr.take(perm[start : start + per_batch])
            try:
                loss, _, grads = total_loss(params, mb, config.alphas, config.mode, grad=True)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", model.with_params(best_params)) from exc
            opt.step(params, grads)
            batch_losses.append(loss)
        try:
            val, parts = total_loss(params, va, config.alphas, config.mode)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", model.with_params(best_params)) from exc
        history.rows.append({
            "epoch": epoch, "train": float(np.mean(batch_losses)), "val": val,
            "val_econ": parts["econ"], "val_recon": parts["recon"], "val_linear": parts["linear"],
        })
        if val < best_val:
            best_val = val
            best_params = {k: v.copy() for k, v in params.items()}
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train %.4g val %.4g %s", epoch, history.rows[-1]["train"], val, parts)
    return model.with_params(best_params), history


# --- persistence -------------------------------------------------------------


def save_model(model: LiftingModel, path) -> None:
    doc = {
        "schema": SCHEMA,
        "sizes": model.net.sizes,
        "layers": [
            {"W_shape": list(W.shape), "W": W.reshape(-1).tolist(), "b": b.tolist()}
            for W, b in zip(model.net.weights, model.net.biases)
        ],
        "head": {"mode": model.head.mode, "q": model.head.q.tolist(), "P": model.head.P.tolist(), "b": model.head.b},
        "G": {"shape": list(model.G.shape), "data": model.G.reshape(-1).tolist()},
        "scaling": model.scaling.to_dict(),
        "constrained": list(model.constrained),
        "fingerprint": model.fingerprint,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path, n_z: int | None = None) -> LiftingModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != SCHEMA:
        raise CheckpointError(f"{path}: schema {doc.get('schema')!r}, expected {SCHEMA!r}")
    weights = [np.asarray(l["W"], float).reshape(l["W_shape"]) for l in doc["layers"]]
    biases = [np.asarray(l["b"], float) for l in doc["layers"]]
    net = TransformNet(weights, biases)
    if n_z is not None and net.n_out != n_z:
        raise DimensionError(f"{path}: checkpoint has n_z={net.n_out}, expected {n_z}")
    h = doc["head"]
    G = np.asarray(doc["G"]["data"], float).reshape(doc["G"]["shape"])
    if G.shape[1] != net.n_out:
        raise DimensionError(f"{path}: G has {G.shape[1]} columns, network emits {net.n_out}")
    return LiftingModel(
        net=net,
        head=CostHead(h["q"], h["P"], h["b"], h["mode"]),
        G=G,
        scaling=Scaling.from_dict(doc["scaling"]),
        constrained=tuple(doc["constrained"]),
        fingerprint=doc.get("fingerprint", ""),
    )
