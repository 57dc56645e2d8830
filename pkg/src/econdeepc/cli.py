"""Command-line front end: ``generate-data``, ``train``, ``simulate``, ``evaluate``, ``run-all``.

Exit codes: 0 success, 1 validation error (bad config, flags or files),
2 runtime failure (divergence, failed gradient check, solver failure).

Typical session::

    econdeepc generate-data --case case1 --out work/case1
    econdeepc train --data work/case1 --out work/case1.model.json --grad-check
    econdeepc simulate --data work/case1 --model work/case1.model.json --mode econ --out work/res/case1/econ
    econdeepc evaluate work/res/case1/econ work/res/case1/constant --out work/table
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from . import datagen, learn
from .config import ConfigError, ExperimentConfig
from .controller import ControllerError, closed_loop, make_controller
from .datagen import DatasetFormatError
from .learn import CheckpointError, TrainingDiverged
from .plant import SimulationDiverged
from .trajkit import DimensionError, is_persistently_exciting

logger = logging.getLogger(__name__)

N_X_CSTR = 4
GRAD_CHECK_LIMIT = 1e-3
RUN_FILE = "run.yaml"
AGGREGATE_FILE = "aggregate.csv"


class CommandFailed(RuntimeError):
    """Runtime failure surfaced with exit code 2."""


# --- commands -------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out, case: str = "case1", seed: int | None = None) -> dict:
    """Generate, split and save one case's dataset; returns a report dict."""
    seed = cfg.data.seed if seed is None else seed
    plant = cfg.plant.make()
    n_win = cfg.n_window_samples(case)
    try:
        ds = datagen.generate(plant, cfg.data.T_hankel, n_win, cfg.L, seed)
    except SimulationDiverged as exc:
        raise CommandFailed(f"case {case!r}, seed {seed}: {exc}") from exc
    datagen.split(ds, cfg.data.split_ratio, cfg.data.split_seed)
    ds.metadata["case"] = case
    csv_path, meta_path = datagen.save(ds, out)
    order = cfg.L + N_X_CSTR
    pe, rank = is_persistently_exciting(ds.hankel_traj.inputs, order)
    counts = {t: ds.tags.count(t) for t in datagen.SPLITS}
    report = {
        "case": case, "csv": str(csv_path), "meta": str(meta_path),
        "hankel_samples": len(ds.hankel_traj), "window_samples": len(ds.windows) * cfg.L,
        "windows": counts, "pe_order": order, "pe_rank": rank, "pe_required": order * plant.n_u,
        "persistently_exciting": pe,
    }
    print(f"generated {case}: {report['hankel_samples']} Hankel + {report['window_samples']} window samples "
          f"({counts['train']}/{counts['val']}/{counts['test']} windows) -> {csv_path}")
    print(f"PE check (order {order}): rank {rank} of {report['pe_required']} -> {'ok' if pe else 'NOT persistently exciting'}")
    return report


def grad_check(model: learn.LiftingModel, ds: datagen.Dataset, tcfg: learn.TrainConfig, n_windows: int = 10,
               n_probe: int = 100, seed: int = 0) -> dict:
    """Finite-difference check of the composite-loss gradient at the model's parameters."""
    from .trajkit import build_hankel, pseudo_inverse

    u, y, c = ds.stacked("train")
    k = min(n_windows, len(u))
    sc = model.scaling
    Hu_pinv = pseudo_inverse(build_hankel(sc.norm_u(ds.hankel_traj.inputs), ds.L).data)
    batch = learn.make_batch(sc, model.constrained, ds.hankel_traj, u[:k], y[:k], c[:k], Hu_pinv)
    params = {kk: np.array(v, dtype=float) for kk, v in model.params().items()}
    return learn.check_gradients(params, batch, tcfg.alphas, tcfg.mode, n_probe=n_probe,
                                 rng=np.random.default_rng(seed))


def cmd_train(cfg: ExperimentConfig, data, out, do_grad_check: bool = False, seed: int | None = None) -> dict:
    """Train on a saved dataset; writes the checkpoint and ``<out>.history.csv``."""
    ds = datagen.load(data)
    tcfg = cfg.training if seed is None else replace(cfg.training, seed=seed)
    out = Path(out)
    hist_path = out.with_suffix(".history.csv")
    try:
        model, history = learn.train(ds, tcfg)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            learn.save_model(exc.last_good, out)
            raise CommandFailed(f"training diverged ({exc}); last good checkpoint written to {out}") from exc
        raise CommandFailed(f"training diverged ({exc})") from exc
    learn.save_model(model, out)
    history.to_csv(hist_path)
    last = history.rows[-1]
    report = {"model": str(out), "history": str(hist_path), "final_train": last["train"], "final_val": last["val"],
              "best_val": float(history.column("val").min())}
    print(f"trained {tcfg.epochs} epochs: train {last['train']:.4g}, val {last['val']:.4g} "
          f"(best val {report['best_val']:.4g}) -> {out}")
    if do_grad_check:
        gc = grad_check(model, ds, tcfg)
        report["grad_check_max_rel_error"] = gc["max_rel_error"]
        print(f"gradient check: max relative error {gc['max_rel_error']:.3g} over {len(gc['probes'])} "
              f"coordinates ({gc['skipped_kinks']} redrawn at ReLU kinks)")
        if gc["max_rel_error"] > GRAD_CHECK_LIMIT:
            raise CommandFailed(f"gradient check failed: {gc['max_rel_error']:.3g} > {GRAD_CHECK_LIMIT}")
    return report


def _controller_config(cfg: ExperimentConfig, mode: str, reduced_rank):
    c = cfg.controller
    if mode == "econ-reduced":
        n_r = None if reduced_rank in (None, "auto") else int(reduced_rank)
        c = replace(c, order="reduced", n_r=n_r if reduced_rank is not None else c.n_r)
    return c


def set_point(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Tracking set point ``(y_ref, u_ref)``; unset entries come from a noise-free settle run."""
    t = cfg.tracking
    u_ref = cfg.plant.bounds.center if t.u_ref is None else np.asarray(t.u_ref, float)
    if t.y_ref is not None:
        return np.asarray(t.y_ref, float), u_ref
    plant = cfg.plant.make(noise_enabled=False)
    plant.reset(0)
    for _ in range(t.settle_steps):
        y = plant.step(u_ref)
    return y, u_ref


def simulate_seed(cfg: ExperimentConfig, ds: datagen.Dataset, model, mode: str, seed: int, reduced_rank=None,
                  label: str = "", sp=None):
    """One closed-loop run with fresh plant and controller state."""
    plant = cfg.plant.make()
    ctrl = make_controller(mode, ds.hankel_traj, _controller_config(cfg, mode, reduced_rank), model,
                           set_point=sp, rate_weight=cfg.tracking.rate_weight)
    return closed_loop(plant, ctrl, cfg.evaluation.steps, seed, label=label)


def _seed_file(seed: int) -> str:
    return f"seed_{seed:06d}.csv"


def cmd_simulate(cfg: ExperimentConfig, data, model_path, mode: str, seeds, out, reduced_rank=None,
                 label: str = "", workers: int | None = None) -> dict:
    """Closed-loop runs for every seed; writes per-seed CSVs, ``aggregate.csv`` and ``run.yaml``."""
    if mode not in cfgmod.MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {cfgmod.MODES}")
    ds = datagen.load(data)
    needs_model = mode in ("econ", "econ-reduced")
    if needs_model and model_path is None:
        raise ConfigError(f"mode {mode!r} needs --model")
    model = learn.load_model(model_path, cfg.training.n_z) if needs_model else None
    sp = set_point(cfg) if mode == "tracking" else None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in seeds]
    workers = workers or cfg.evaluation.workers

    def run(seed):
        try:
            return simulate_seed(cfg, ds, model, mode, seed, reduced_rank, label, sp)
        except (SimulationDiverged, ControllerError, FloatingPointError) as exc:
            logger.error("seed %d failed: %s", seed, exc)
            return exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, seeds))  # map keeps seed order
    else:
        results = [run(s) for s in seeds]

    done = {s: r for s, r in zip(seeds, results) if not isinstance(r, Exception)}
    missing = [s for s in seeds if s not in done]
    for s, r in done.items():
        r.to_csv(out / _seed_file(s))
    if done:
        write_aggregate(out / AGGREGATE_FILE, [done[s].profits for s in sorted(done)])
    run_doc = {
        "label": label, "mode": mode, "steps": cfg.evaluation.steps, "seeds": seeds, "missing_seeds": missing,
        "average_profit": {s: repr(done[s].average_profit) for s in sorted(done)},
        "fallbacks": {s: done[s].n_fallbacks for s in sorted(done)},
        "runs": [done[s].summary() for s in sorted(done)],
    }
    with open(out / RUN_FILE, "w") as fh:
        yaml.safe_dump(run_doc, fh, sort_keys=False)
    if done:
        means = [done[s].average_profit for s in sorted(done)]
        print(f"{label or mode}: {len(done)} runs, average profit {np.mean(means):.4f} +- {np.std(means):.4f}"
              + (f"; missing seeds {missing}" if missing else ""))
    if not done:
        raise CommandFailed(f"every seed failed for mode {mode!r}")
    return run_doc


def write_aggregate(path, profit_rows) -> None:
    P = np.asarray(profit_rows, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_profit", "std_profit", "n_runs"])
        for k in range(P.shape[1]):
            w.writerow([k, repr(float(P[:, k].mean())), repr(float(P[:, k].std())), P.shape[0]])


def read_profits(path) -> np.ndarray:
    """Per-step profits from a per-seed result CSV."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "profit" not in header:
            raise DatasetFormatError(f"{path}: missing 'profit' column")
        j = header.index("profit")
        vals = []
        for lineno, row in enumerate(reader, start=2):
            try:
                vals.append(float(row[j]))
            except (IndexError, ValueError):
                raise DatasetFormatError(f"{path}:{lineno}: bad profit field") from None
    if not vals:
        raise DatasetFormatError(f"{path}: no rows")
    return np.asarray(vals)


def _result_dir_info(d: Path) -> tuple[str, str, list[Path]]:
    run = d / RUN_FILE
    if not run.exists():
        raise DatasetFormatError(f"{d}: not a result directory (missing {RUN_FILE})")
    with open(run) as fh:
        doc = yaml.safe_load(fh) or {}
    label = doc.get("label") or ""
    case = label.split("/")[0] if "/" in label else (label or d.parent.name)
    return case, doc.get("mode", d.name), sorted(d.glob("seed_*.csv"))


def cmd_evaluate(paths, out=None) -> dict:
    """Average profit per run and across runs, a method x case table and plot series.

    Each path is a result directory written by :func:`cmd_simulate`.
    Writes ``<out>.summary.yaml``, ``<out>.table.md`` and ``<out>.series.csv``
    when ``out`` is given.
    """
    table: dict[str, dict[str, dict]] = {}
    series = []
    for p in map(Path, paths):
        case, mode, files = _result_dir_info(p)
        if not files:
            raise DatasetFormatError(f"{p}: no per-seed result files")
        runs = [read_profits(f) for f in files]
        per_run = np.array([r.mean() for r in runs])
        n = min(len(r) for r in runs)
        P = np.array([r[:n] for r in runs])
        table.setdefault(mode, {})[case] = {
            "mean": repr(float(per_run.mean())), "std": repr(float(per_run.std())), "n_runs": len(runs),
            "per_run": [repr(float(v)) for v in per_run],
        }
        series.append((case, mode, P.mean(axis=0), P.std(axis=0)))

    cases = sorted({c for m in table.values() for c in m})
    modes = list(table)
    summary = {"cases": cases, "methods": modes, "average_profit": table}
    md = format_table(table, cases)
    print(md)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out.with_suffix(".summary.yaml"), "w") as fh:
            yaml.safe_dump(summary, fh, sort_keys=True)
        out.with_suffix(".table.md").write_text(md + "\n")
        with open(out.with_suffix(".series.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "method", "step", "mean_profit", "std_profit"])
            for case, mode, m, s in series:
                for k in range(len(m)):
                    w.writerow([case, mode, k, repr(float(m[k])), repr(float(s[k]))])
    return summary


def format_table(table: dict, cases: list[str]) -> str:
    """Markdown grid: one row per method, one column per data case (mean profit, kmol/(m^3 h))."""
    lines = ["| method | " + " | ".join(cases) + " |", "|---|" + "---|" * len(cases)]
    for mode, row in table.items():
        cells = [f"{float(row[c]['mean']):.4f}" if c in row else "-" for c in cases]
        lines.append(f"| {mode} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def run_case_study(cfg: ExperimentConfig, out, cases=None, modes=None, seeds=None) -> dict:
    """Full pipeline per case: generate -> train -> simulate every mode -> evaluate."""
    out = Path(out)
    cases = list(cfg.data.cases) if cases is None else list(cases)
    modes = list(cfg.evaluation.modes) if modes is None else list(modes)
    seeds = cfg.evaluation.seeds if seeds is None else list(seeds)
    result_dirs = []
    for case in cases:
        data = out / "data" / case
        model = out / "models" / f"{case}.json"
        cmd_generate(cfg, data, case)
        cmd_train(cfg, data, model)
        for mode in modes:
            d = out / "results" / case / mode
            cmd_simulate(cfg, data, model, mode, seeds, d, label=f"{case}/{mode}")
            result_dirs.append(d)
    return cmd_evaluate(result_dirs, out / "case_study")


# --- argument parsing ---------------------------------------------------------------


def _parse_seeds(text: str | None, cfg: ExperimentConfig) -> list[int]:
    if text is None:
        return cfg.evaluation.seeds
    seeds = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif part.strip():
            seeds.append(int(part))
    if not seeds:
        raise ConfigError(f"no seeds in {text!r}")
    return seeds


def _reduced_rank(text: str | None):
    if text is None or text == "auto":
        return text
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"--reduced-rank must be an integer or 'auto', got {text!r}") from None
    if n < 1:
        raise ConfigError("--reduced-rank must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="econdeepc", description="Economic DeePC with a learned output lifting.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config (defaults to the packaged one)")

    g = sub.add_parser("generate-data", help="open-loop data generation and splitting")
    common(g)
    g.add_argument("--case", default="case1")
    g.add_argument("--seed", type=int)
    g.add_argument("--ratio", help="split ratio such as 7:2:1 (overrides the config)")
    g.add_argument("--out", required=True, help="output stem; writes <out>.csv and <out>.meta.yaml")

    t = sub.add_parser("train", help="train the lifting, cost head and reconstruction matrix")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--grad-check", action="store_true", help="finite-difference check of the loss gradient")
    t.add_argument("--out", required=True, help="checkpoint path (JSON)")

    s = sub.add_parser("simulate", help="closed-loop runs over several seeds")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--model")
    s.add_argument("--mode", default="econ", choices=cfgmod.MODES)
    s.add_argument("--seeds", help="comma list and ranges, e.g. 1000-1019")
    s.add_argument("--reduced-rank", help="retained rank n, or 'auto' for the tolerance rule")
    s.add_argument("--label", default="")
    s.add_argument("--out", required=True, help="result directory")

    e = sub.add_parser("evaluate", help="summarize result directories")
    e.add_argument("results", nargs="+")
    e.add_argument("--out", help="output stem for summary, table and series files")

    r = sub.add_parser("run-all", help="generate, train, simulate and evaluate every configured case")
    common(r)
    r.add_argument("--seeds")
    r.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(getattr(args, "config", None)) if args.command != "evaluate" else None
        if args.command == "generate-data":
            if args.ratio:
                cfg.data.split_ratio = cfgmod.parse_ratio(args.ratio)
            cmd_generate(cfg, args.out, args.case, args.seed)
        elif args.command == "train":
            cmd_train(cfg, args.data, args.out, args.grad_check, args.seed)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.data, args.model, args.mode, _parse_seeds(args.seeds, cfg), args.out,
                         _reduced_rank(args.reduced_rank), args.label)
        elif args.command == "evaluate":
            cmd_evaluate(args.results, args.out)
        elif args.command == "run-all":
            run_case_study(cfg, args.out, seeds=_parse_seeds(args.seeds, cfg))
    except (ConfigError, DatasetFormatError, CheckpointError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CommandFailed, SimulationDiverged, TrainingDiverged, ControllerError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
