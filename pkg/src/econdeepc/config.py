"""Experiment configuration: one nested YAML file for the whole pipeline.

Sections: ``plant``, ``data``, ``training``, ``controller``, ``evaluation``.
The packaged ``data/default_config.yaml`` is the reference; user files may
override any subset of keys (unknown keys are rejected).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .controller import ControllerConfig
from .learn import TrainConfig
from .plant import CstrParams, CstrPlant, InputBounds, NoiseConfig

MODES = ("econ", "econ-reduced", "tracking", "constant")


class ConfigError(ValueError):
    pass


def parse_ratio(text) -> tuple[int, int, int]:
    """``"7:2:1"`` (or a three-element list) to a ratio tuple."""
    parts = text.split(":") if isinstance(text, str) else list(text)
    try:
        vals = tuple(int(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigError(f"split ratio {text!r} is not a list of integers") from None
    if len(vals) != 3 or min(vals) < 0 or sum(vals) == 0:
        raise ConfigError(f"split ratio must look like 'train:val:test', got {text!r}")
    return vals


@dataclass
class PlantSection:
    params: CstrParams
    noise: NoiseConfig
    x0: tuple[float, ...]
    bounds: InputBounds
    dt: float = 0.025
    n_sub: int = 10

    def make(self, noise_enabled: bool | None = None) -> CstrPlant:
        noise = self.noise
        if noise_enabled is not None and noise_enabled != noise.enabled:
            noise = NoiseConfig(**{**_noise_dict(noise), "enabled": noise_enabled})
        return CstrPlant(self.params, noise, self.x0, self.dt, self.n_sub, self.bounds)


@dataclass
class DataSection:
    T_hankel: int = 1000
    cases: dict[str, int] = field(default_factory=lambda: {"case1": 2000, "case2": 10000})
    split_ratio: tuple[int, int, int] = (7, 2, 1)
    seed: int = 0
    split_seed: int = 0


@dataclass
class TrackingSection:
    """Set-point for the tracking baseline.

    ``u_ref=None`` means the centre of the input box; ``y_ref=None`` means
    the noise-free steady-state output reached after ``settle_steps`` steps
    under ``u_ref``. ``rate_weight`` scales the input weight relative to the
    output weight, both expressed in data-standardized units.
    """

    u_ref: tuple[float, ...] | None = None
    y_ref: tuple[float, ...] | None = None
    rate_weight: float = 0.1
    settle_steps: int = 400


@dataclass
class EvaluationSection:
    steps: int = 100
    n_repeats: int = 20
    first_seed: int = 1000
    modes: tuple[str, ...] = ("econ", "constant")
    workers: int = 1
    out_dir: str = "results"

    @property
    def seeds(self) -> list[int]:
        return list(range(self.first_seed, self.first_seed + self.n_repeats))


@dataclass
class ExperimentConfig:
    plant: PlantSection
    data: DataSection
    training: TrainConfig
    controller: ControllerConfig
    evaluation: EvaluationSection
    tracking: TrackingSection = field(default_factory=TrackingSection)

    @property
    def L(self) -> int:
        return self.controller.T_ini + self.controller.N_p

    def n_window_samples(self, case: str) -> int:
        if case not in self.data.cases:
            raise ConfigError(f"unknown case {case!r}; configured: {sorted(self.data.cases)}")
        return self.data.cases[case] - self.data.T_hankel

    def to_dict(self) -> dict:
        c = self.controller
        R = None if c.R is None else c.R.tolist()
        return {
            "plant": {
                "params": self.plant.params.to_dict(),
                "x0": list(self.plant.x0),
                "dt": self.plant.dt,
                "n_sub": self.plant.n_sub,
                "bounds": {"lo": list(self.plant.bounds.lo), "hi": list(self.plant.bounds.hi)},
                "noise": _noise_dict(self.plant.noise),
            },
            "data": {
                "T_hankel": self.data.T_hankel,
                "cases": dict(self.data.cases),
                "split_ratio": ":".join(str(r) for r in self.data.split_ratio),
                "seed": self.data.seed,
                "split_seed": self.data.split_seed,
            },
            "training": self.training.to_dict(),
            "controller": {
                "T_ini": c.T_ini, "N_p": c.N_p, "beta": c.beta, "R": R, "lambda_g": c.lambda_g,
                "y_c_lo": None if c.y_c_lo is None else c.y_c_lo.tolist(),
                "y_c_hi": None if c.y_c_hi is None else c.y_c_hi.tolist(),
                "order": c.order, "n_r": c.n_r, "mode": c.mode, "soft_penalty": c.soft_penalty,
                "tol": c.tol, "max_iters": c.max_iters,
            },
            "tracking": {
                "u_ref": None if self.tracking.u_ref is None else list(self.tracking.u_ref),
                "y_ref": None if self.tracking.y_ref is None else list(self.tracking.y_ref),
                "rate_weight": self.tracking.rate_weight, "settle_steps": self.tracking.settle_steps,
            },
            "evaluation": {
                "steps": self.evaluation.steps, "n_repeats": self.evaluation.n_repeats,
                "first_seed": self.evaluation.first_seed, "modes": list(self.evaluation.modes),
                "workers": self.evaluation.workers, "out_dir": self.evaluation.out_dir,
            },
        }


def _noise_dict(n: NoiseConfig) -> dict:
    return {k: getattr(n, k) for k in ("conc_std", "conc_clip", "temp_std", "temp_clip", "seed", "enabled")}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("cases",):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def default_dict() -> dict:
    text = resources.files("econdeepc").joinpath("data/default_config.yaml").read_text()
    return yaml.safe_load(text)


def from_dict(d: dict) -> ExperimentConfig:
    """Build and validate a config from a (possibly partial) nested dict."""
    d = _merge(default_dict(), d or {})
    try:
        p = d["plant"]
        bounds = InputBounds(tuple(float(v) for v in p["bounds"]["lo"]), tuple(float(v) for v in p["bounds"]["hi"]))
        x0 = tuple(float(v) for v in p["x0"])
        if len(x0) != 4 or len(bounds.lo) != 4:
            raise ConfigError("the CSTR needs 4 initial states and 4 input bounds")
        plant = PlantSection(CstrParams.from_dict(p["params"]), NoiseConfig(**p["noise"]), x0, bounds,
                             float(p["dt"]), int(p["n_sub"]))
        if not plant.dt > 0 or plant.n_sub < 1:
            raise ConfigError("plant.dt must be positive and plant.n_sub >= 1")

        dd = d["data"]
        data = DataSection(int(dd["T_hankel"]), {str(k): int(v) for k, v in dd["cases"].items()},
                           parse_ratio(dd["split_ratio"]), int(dd["seed"]), int(dd["split_seed"]))
        training = TrainConfig.from_dict(d["training"])

        c = dict(d["controller"])
        R = c.pop("R")
        if R is not None:
            R = np.asarray(R, float)
            R = np.diag(R) if R.ndim == 1 else R
        controller = ControllerConfig(bounds=bounds, R=R, **c)

        t = d["tracking"]
        tracking = TrackingSection(
            None if t["u_ref"] is None else tuple(float(v) for v in t["u_ref"]),
            None if t["y_ref"] is None else tuple(float(v) for v in t["y_ref"]),
            float(t["rate_weight"]), int(t["settle_steps"]),
        )
        if not tracking.rate_weight > 0 or tracking.settle_steps < 1:
            raise ConfigError("tracking.rate_weight must be positive and tracking.settle_steps >= 1")
        for name in ("u_ref", "y_ref"):
            ref = getattr(tracking, name)
            if ref is not None and len(ref) != 4:
                raise ConfigError(f"tracking.{name} needs 4 entries, got {len(ref)}")

        e = d["evaluation"]
        evaluation = EvaluationSection(int(e["steps"]), int(e["n_repeats"]), int(e["first_seed"]),
                                       tuple(e["modes"]), int(e["workers"]), str(e["out_dir"]))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None

    cfg = ExperimentConfig(plant, data, training, controller, evaluation, tracking)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.data.T_hankel < cfg.L:
        raise ConfigError(f"data.T_hankel={cfg.data.T_hankel} is shorter than L={cfg.L}")
    for case, total in cfg.data.cases.items():
        if total - cfg.data.T_hankel < 10 * cfg.L:
            raise ConfigError(f"case {case!r}: {total} samples leave fewer than 10 training windows")
    if cfg.training.mode != cfg.controller.mode:
        raise ConfigError(
            f"training.mode={cfg.training.mode!r} differs from controller.mode={cfg.controller.mode!r}")
    if cfg.controller.y_c_lo is not None:
        n_c = 4 if cfg.training.constrained is None else len(cfg.training.constrained)
        if cfg.controller.y_c_lo.size != n_c:
            raise ConfigError(f"controller.y_c bounds have {cfg.controller.y_c_lo.size} entries, expected {n_c}")
    bad = [m for m in cfg.evaluation.modes if m not in MODES]
    if bad:
        raise ConfigError(f"unknown evaluation modes {bad}; choose from {MODES}")
    e = cfg.evaluation
    if e.steps < 1 or e.n_repeats < 1 or e.workers < 1:
        raise ConfigError("evaluation.steps, n_repeats and workers must be >= 1")


def load(path=None) -> ExperimentConfig:
    """Parse a YAML config file; ``None`` loads the packaged defaults."""
    if path is None:
        return from_dict({})
    path = Path(path)
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if d is not None and not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(d or {})


def dump(cfg: ExperimentConfig, path=None) -> str:
    """Serialize to YAML (written to ``path`` when given)."""
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text
