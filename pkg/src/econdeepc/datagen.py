"""Open-loop excitation, dataset assembly, splitting, and CSV persistence.

File layout (see ``docs/schema.md``): ``<stem>.csv`` holds one row per time
step with columns ``traj_id, step, u0..u{n_u-1}, y0..y{n_y-1}, cost, split``;
``<stem>.meta.yaml`` holds seeds, noise config, ``dt`` and dimensions.
Trajectory 0 is the Hankel trajectory (split tag ``hankel``); trajectories
1..N are the L-step windows.
"""

from __future__ import annotations

import csv
import datetime
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .plant import InputBounds, SimulationDiverged
from .trajkit import Trajectory

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
HANKEL_TAG = "hankel"


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    hankel_traj: Trajectory
    windows: list[Trajectory]
    tags: list[str] = field(default_factory=list)
    ratio: tuple[int, ...] = (7, 2, 1)
    metadata: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return len(self.windows[0])

    def subset(self, tag: str) -> list[Trajectory]:
        return [w for w, t in zip(self.windows, self.tags) if t == tag]

    def stacked(self, tag: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Windows of one split as ``(B, L, n_u)``, ``(B, L, n_y)``, ``(B, L)`` arrays."""
        ws = self.subset(tag)
        if not ws:
            raise ValueError(f"no windows tagged {tag!r}")
        return (
            np.stack([w.inputs for w in ws]),
            np.stack([w.outputs for w in ws]),
            np.stack([w.costs for w in ws]),
        )


def excite(bounds: InputBounds, T: int, seed) -> np.ndarray:
    """I.i.d. uniform input samples inside the box, shape ``(T, n_u)``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    lo, hi = bounds.lo_arr, bounds.hi_arr
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((T, lo.size))


def rollout(plant, inputs: np.ndarray, seed, label: str = "") -> Trajectory:
    """Apply ``inputs`` open loop; row k pairs ``u_k`` with the output the plant reports for it."""
    plant.reset(seed)
    T = len(inputs)
    ys = np.empty((T, plant.n_y))
    for k, u in enumerate(inputs):
        try:
            ys[k] = plant.step(u)
        except SimulationDiverged as exc:
            raise SimulationDiverged(f"{label} rollout diverged at step {k} (seed {seed}): {exc}") from exc
    costs = np.asarray(plant.profit(inputs, ys), dtype=float).reshape(T)
    return Trajectory(inputs, ys, costs, plant.dt)


def generate(plant, T_hankel: int, n_window_samples: int, L: int, seed: int = 0) -> Dataset:
    """Roll out the Hankel trajectory and the window trajectory.

    The window trajectory has ``n_window_samples`` steps and is cut into
    ``n_window_samples // L`` non-overlapping windows; a trailing remainder
    shorter than ``L`` is discarded.
    """
    if T_hankel < L:
        raise ValueError(f"T_hankel={T_hankel} must be >= L={L}")
    if n_window_samples < L:
        raise ValueError(f"need at least L={L} window samples, got {n_window_samples}")
    ss = np.random.SeedSequence(seed)
    s_hu, s_hn, s_wu, s_wn = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    hankel = rollout(plant, excite(plant.bounds, T_hankel, s_hu), s_hn, "hankel")
    long = rollout(plant, excite(plant.bounds, n_window_samples, s_wu), s_wn, "window")
    windows = [long.segment(i * L, (i + 1) * L) for i in range(n_window_samples // L)]
    meta = {
        "seed": int(seed),
        "T_hankel": int(T_hankel),
        "n_window_samples": int(n_window_samples),
        "L": int(L),
        "dt": float(plant.dt),
        "n_u": int(plant.n_u),
        "n_y": int(plant.n_y),
        "generated": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    noise = getattr(plant, "noise", None)
    if noise is not None:
        meta["noise"] = {k: getattr(noise, k) for k in ("conc_std", "conc_clip", "temp_std", "temp_clip", "enabled")}
    return Dataset(hankel, windows, metadata=meta)


def split_counts(n: int, ratio) -> list[int]:
    ratio = np.asarray(ratio, dtype=float)
    counts = np.floor(n * ratio / ratio.sum()).astype(int)
    # largest-remainder rounding
    rem = n * ratio / ratio.sum() - counts
    for i in np.argsort(-rem, kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def split(dataset: Dataset, ratio=(7, 2, 1), seed: int = 0) -> Dataset:
    """Tag windows train/val/test by a seeded random permutation."""
    n = len(dataset.windows)
    if len(ratio) != 3 or min(ratio) < 0 or sum(ratio) <= 0:
        raise ValueError(f"ratio must have three non-negative entries, got {ratio}")
    if n < 10:
        raise ValueError(f"need at least 10 windows to split, got {n}")
    counts = split_counts(n, ratio)
    perm = np.random.default_rng(seed).permutation(n)
    tags = [""] * n
    start = 0
    for tag, c in zip(SPLITS, counts):
        for i in perm[start : start + c]:
            tags[i] = tag
        start += c
    dataset.tags = tags
    dataset.ratio = tuple(int(r) for r in ratio)
    dataset.metadata["split_seed"] = int(seed)
    return dataset


def _columns(n_u: int, n_y: int) -> list[str]:
    return ["traj_id", "step", *[f"u{i}" for i in range(n_u)], *[f"y{i}" for i in range(n_y)], "cost", "split"]


def save(dataset: Dataset, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.meta.yaml``; returns both paths."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    meta_path = path.with_suffix(".meta.yaml")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    n_u, n_y = dataset.hankel_traj.n_u, dataset.hankel_traj.n_y
    trajs = [(dataset.hankel_traj, HANKEL_TAG)] + list(zip(dataset.windows, dataset.tags or [""] * len(dataset.windows)))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_columns(n_u, n_y))
        for tid, (tr, tag) in enumerate(trajs):
            for k in range(len(tr)):
                w.writerow(
                    [tid, k, *(repr(float(v)) for v in tr.inputs[k]), *(repr(float(v)) for v in tr.outputs[k]),
                     repr(float(tr.costs[k])), tag]
                )
    meta = dict(dataset.metadata)
    meta["ratio"] = list(dataset.ratio)
    meta["columns"] = _columns(n_u, n_y)
    with open(meta_path, "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)
    return csv_path, meta_path


def load(path) -> Dataset:
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    meta_path = path.with_suffix(".meta.yaml")
    with open(meta_path) as fh:
        meta = yaml.safe_load(fh)
    for key in ("n_u", "n_y", "dt"):
        if key not in meta:
            raise DatasetFormatError(f"{meta_path}: metadata missing key {key!r}")
    n_u, n_y, dt = int(meta["n_u"]), int(meta["n_y"]), float(meta["dt"])
    expected = _columns(n_u, n_y)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError(f"{csv_path}: empty file")
        missing = [c for c in expected if c not in header]
        if missing:
            raise DatasetFormatError(f"{csv_path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in expected]
        rows: dict[int, list] = {}
        tags: dict[int, str] = {}
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise DatasetFormatError(f"{csv_path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            rec = [raw[i] for i in idx]
            try:
                tid = int(rec[0])
                int(rec[1])
                vals = [float(v) for v in rec[2:-1]]
            except ValueError as exc:
                raise DatasetFormatError(f"{csv_path}:{lineno}: {exc}") from None
            rows.setdefault(tid, []).append(vals)
            tags[tid] = rec[-1]
    if 0 not in rows:
        raise DatasetFormatError(f"{csv_path}: no Hankel trajectory (traj_id 0)")

    def to_traj(vals) -> Trajectory:
        a = np.asarray(vals)
        return Trajectory(a[:, :n_u], a[:, n_u : n_u + n_y], a[:, n_u + n_y], dt)

    ids = sorted(k for k in rows if k != 0)
    ratio = tuple(meta.pop("ratio", (7, 2, 1)))
    meta.pop("columns", None)
    return Dataset(
        hankel_traj=to_traj(rows[0]),
        windows=[to_traj(rows[i]) for i in ids],
        tags=[tags[i] for i in ids],
        ratio=ratio,
        metadata=meta,
    )
