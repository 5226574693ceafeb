"""Run orchestration behind the command line: train, eval and the ablation grid."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig, apply_overrides, from_dict
from .data import generate_hierarchy, load_dataset
from .errors import ConfigError, NonFiniteError
from .model import ModelSpec, load_checkpoint, save_checkpoint
from .retrieval import evaluate_both
from .runlog import MetricsRecord, emit_metrics, eval_fields
from .train import train

log = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.txt"


def load_data(cfg: ExperimentConfig):
    """``(train, test)`` datasets from files or from the synthetic generator."""
    if cfg.data.train_path:
        return load_dataset(cfg.data.train_path, "train"), load_dataset(cfg.data.test_path, "test")
    return generate_hierarchy(cfg.data.synthetic)


def model_spec(cfg: ExperimentConfig, num_classes: int) -> ModelSpec:
    return ModelSpec(cfg.encoder, cfg.hyp_dim, num_classes, cfg.per_class)


def _check_against_data(cfg: ExperimentConfig, train_ds, test_ds):
    errors = []
    if train_ds.input_dim != cfg.encoder.input_dim:
        errors.append(f"encoder.input_dim ({cfg.encoder.input_dim}) != data input_dim ({train_ds.input_dim})")
    if test_ds.input_dim != train_ds.input_dim:
        errors.append("train and test files differ in feature count")
    if cfg.train.batch_size > len(train_ds):
        errors.append(f"train.batch_size ({cfg.train.batch_size}) exceeds the training set size ({len(train_ds)})")
    if max(cfg.eval.ks) >= len(test_ds):
        errors.append(f"eval.ks must be smaller than the test set size ({len(test_ds)})")
    if train_ds.num_classes < 2:
        errors.append("training data needs at least 2 classes")
    if errors:
        raise ConfigError(errors)


@dataclass
class RunResult:
    out_dir: Path
    records: list
    eval: dict


def run_training(cfg: ExperimentConfig, out_dir) -> RunResult:
    """Train, writing the config snapshot, metrics log and checkpoint into ``out_dir``."""
    out = Path(out_dir)
    train_ds, test_ds = load_data(cfg)
    _check_against_data(cfg, train_ds, test_ds)
    spec = model_spec(cfg, train_ds.num_classes)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / CONFIG_FILE)
    metrics_path = out / METRICS_FILE
    metrics_path.write_text("")

    ks = cfg.eval.ks
    every = cfg.eval.every
    last = cfg.train.steps
    records = []
    start = time.perf_counter()
    with open(metrics_path, "a") as sink:
        def on_step(step, parts, state):
            ev = None
            if step == last or (every and step % every == 0):
                ev = eval_fields(*evaluate_both(state.params, spec, test_ds, ks, cfg.ball))
            rec = MetricsRecord(step, parts.l_hyperbolic, parts.l_euclidean, parts.l_hyphc, parts.total,
                                time.perf_counter() - start, ev)
            emit_metrics(rec, sink)
            records.append(rec)

        state = train(train_ds, spec, cfg.loss, cfg.train, cfg.ball, on_step=on_step)
    save_checkpoint(out / CHECKPOINT_FILE, state.params, spec, cfg.ball, step=state.step)
    return RunResult(out, records, records[-1].eval)


def run_eval(cfg: ExperimentConfig, checkpoint, out_dir=None) -> MetricsRecord:
    """Evaluate a checkpoint on the configured test split; appends one record when ``out_dir`` is given."""
    params, meta = load_checkpoint(checkpoint)
    if "model" not in meta:
        raise ConfigError([f"{checkpoint}: checkpoint carries no model description"])
    spec = ModelSpec.from_dict(meta["model"])
    _, test_ds = load_data(cfg)
    if test_ds.input_dim != spec.encoder.input_dim:
        raise ConfigError([f"checkpoint expects input_dim {spec.encoder.input_dim}, data has {test_ds.input_dim}"])
    start = time.perf_counter()
    rep_E, rep_H = evaluate_both(params, spec, test_ds, cfg.eval.ks, cfg.ball)
    rec = MetricsRecord(step=int(meta.get("step", 0)), wall_time=time.perf_counter() - start,
                        eval=eval_fields(rep_E, rep_H))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        emit_metrics(rec, out / "eval.jsonl")
    return rec


# -- ablation ---------------------------------------------------------------

def ablation_cells(k_max: int):
    """The eight (eta_H, eta_E, K, tau) settings, single-space and combined."""
    return [
        (1.0, 0.0, 1, 0.0), (0.0, 1.0, 1, 0.0), (1.0, 1.0, 1, 0.0),
        (1.0, 0.0, k_max, 0.0), (0.0, 1.0, k_max, 0.0), (1.0, 1.0, k_max, 0.0),
        (1.0, 0.0, k_max, 0.5), (1.0, 1.0, k_max, 0.5),
    ]


def cell_overrides(cell, seed):
    eta_H, eta_E, K, tau = cell
    return [(["loss", "eta_H"], eta_H), (["loss", "eta_E"], eta_E), (["per_class"], K),
            (["loss", "tau"], tau), (["train", "seed"], seed)]


def _cell_run(args):
    raw, out_dir = args
    cfg = from_dict(raw)
    try:
        res = run_training(cfg, out_dir)
    except NonFiniteError as e:
        log.warning("run in %s diverged: %s", out_dir, e)
        return {"diverged": True}
    return {"diverged": False, "eval": res.eval}


ABLATION_COLUMNS = ["cell", "eta_H", "eta_E", "K", "tau", "runs", "diverged",
                    "recall1_E", "recall1_H", "map_at_r_E", "map_at_r_H"]


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else float("nan")


def run_ablation(cfg: ExperimentConfig, out_dir, jobs: int | None = None):
    """Train every grid cell for every seed in ``cfg.ablate.seeds``.

    Writes ``ablation.csv`` (per-cell means) and ``ablation_runs.csv`` (one row
    per seed); returns the per-cell rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k_max = cfg.per_class
    if k_max < 2:
        raise ConfigError([f"ablation needs per_class K >= 2 for its K_max cells (got K={k_max})"])
    if 1 not in cfg.eval.ks:
        raise ConfigError(["ablation reports R@1, so eval.ks must contain 1"])
    cells = ablation_cells(k_max)
    seeds = list(cfg.ablate.seeds)
    base = cfg.to_dict()
    tasks = []
    for i, cell in enumerate(cells):
        for seed in seeds:
            raw = apply_overrides(base, cell_overrides(cell, seed))
            tasks.append((raw, str(out / f"cell{i}" / f"seed{seed}")))
    for raw, _ in tasks:
        from_dict(raw)  # validate everything before spending time on training

    jobs = cfg.ablate.jobs if jobs is None else jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_run, tasks))
    else:
        results = [_cell_run(t) for t in tasks]

    run_rows, cell_rows = [], []
    it = iter(results)
    for i, cell in enumerate(cells):
        per_seed = []
        for seed in seeds:
            r = next(it)
            row = {"cell": i, "eta_H": cell[0], "eta_E": cell[1], "K": cell[2], "tau": cell[3], "seed": seed,
                   "diverged": int(r["diverged"])}
            if not r["diverged"]:
                ev = r["eval"]
                row.update(recall1_E=ev["E"]["recall_at"][1], recall1_H=ev["H"]["recall_at"][1],
                           map_at_r_E=ev["E"]["map_at_r"], map_at_r_H=ev["H"]["map_at_r"])
            per_seed.append(row)
        run_rows.extend(per_seed)
        summary = {"cell": i, "eta_H": cell[0], "eta_E": cell[1], "K": cell[2], "tau": cell[3],
                   "runs": len(per_seed), "diverged": sum(r["diverged"] for r in per_seed)}
        for key in ("recall1_E", "recall1_H", "map_at_r_E", "map_at_r_H"):
            summary[key] = _mean([r.get(key) for r in per_seed])
        cell_rows.append(summary)

    _write_csv(out / "ablation_runs.csv", run_rows,
               ["cell", "eta_H", "eta_E", "K", "tau", "seed", "diverged",
                "recall1_E", "recall1_H", "map_at_r_E", "map_at_r_H"])
    _write_csv(out / "ablation.csv", cell_rows, ABLATION_COLUMNS)
    return cell_rows


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, restval="")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) and math.isfinite(v) else v) for k, v in row.items()})


def read_ablation(path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) if v not in ("", None) else None for k, v in row.items()} for row in csv.DictReader(fh)]


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, train=replace(cfg.train, seed=seed))
