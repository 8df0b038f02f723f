"""Accuracy, multi-seed trials, the ablation suite and report files."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import HdaDataset, SynthSpec, gen_synthetic, resample_labeled
from .errors import ConfigError, FileError, ShapeError, StnError
from .diffcore import GradCheckReport, grad_check
from .model import ModelConfig, StnParams, init_params, project_source, project_target
from .numeric import SeededRng
from .trainer import (
    VARIANTS,
    Problem,
    TrainConfig,
    TrainTrace,
    objective,
    predict,
    soft_labels_for,
    train,
    write_trace_csv,
)

log = logging.getLogger(__name__)


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.size != truth.size:
        raise ShapeError(f"{pred.size} predictions for {truth.size} labels")
    if pred.size == 0:
        raise ShapeError("accuracy of an empty prediction set")
    return float(np.count_nonzero(pred == truth)) / pred.size


@dataclass
class TrialReport:
    seed: int
    variant: str
    accuracy: float
    wall_ms: float
    trace: TrainTrace | None = field(default=None, repr=False)


@dataclass
class SuiteReport:
    """Trials grouped by variant. ``std`` is the population standard deviation."""

    trials: dict = field(default_factory=dict)  # variant -> list[TrialReport]

    def accuracies(self, variant) -> np.ndarray:
        return np.array([t.accuracy for t in self.trials[variant]])

    def mean(self, variant) -> float:
        return float(np.mean(self.accuracies(variant)))

    def std(self, variant) -> float:
        return float(np.std(self.accuracies(variant)))

    @property
    def variants(self):
        return list(self.trials)

    def to_json(self, include_wall_time=True):
        out = []
        for variant, trials in self.trials.items():
            rows = []
            for t in trials:
                row = {"seed": t.seed, "accuracy": _json_float(t.accuracy)}
                if include_wall_time:
                    row["wall_ms"] = t.wall_ms
                rows.append(row)
            out.append({"variant": variant, "trials": rows,
                        "mean": _json_float(self.mean(variant)), "std": _json_float(self.std(variant))})
        return out

    def dump(self, path, include_wall_time=True) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(include_wall_time), indent=2) + "\n", encoding="utf-8")
        return path

    def summary_table(self) -> str:
        lines = [f"{'variant':<12} {'trials':>6} {'mean %':>8} {'std %':>7}"]
        for v in self.variants:
            lines.append(f"{v:<12} {len(self.trials[v]):>6} {100 * self.mean(v):>8.2f} {100 * self.std(v):>7.2f}")
        return "\n".join(lines)


def _json_float(x):
    # no truth means no accuracy; JSON has no NaN
    return None if np.isnan(x) else x


def trial_dataset(dataset_or_spec, seed: int) -> HdaDataset:
    """The dataset trial ``seed`` trains on.

    A :class:`SynthSpec` is regenerated with ``seed``. A fixed dataset with
    held-out truth gets its labeled target rows redrawn; without truth it is
    used unchanged.
    """
    if isinstance(dataset_or_spec, SynthSpec):
        return gen_synthetic(replace(dataset_or_spec, seed=seed))
    if dataset_or_spec.y_u_truth is None:
        return dataset_or_spec
    return resample_labeled(dataset_or_spec, SeededRng(seed))


def _run_one(args):
    dataset, mcfg, tcfg, seed = args
    start = time.perf_counter()
    try:
        trace = train(dataset, replace(mcfg, init_seed=seed), tcfg)
    except StnError as exc:
        exc.args = (f"seed {seed}: {exc}",) + exc.args[1:]
        raise
    wall_ms = 1000.0 * (time.perf_counter() - start)
    if dataset.y_u_truth is None:
        acc = float("nan")
    else:
        acc = accuracy(predict(trace.params, dataset.X_u, mcfg.slope), dataset.y_u_truth.reveal())
    return TrialReport(seed, tcfg.variant, acc, wall_ms, trace)


def _run_jobs(jobs, n_jobs):
    if n_jobs <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        # map preserves submission order, so the join is ordered by seed
        return list(pool.map(_run_one, jobs))


def run_trials(dataset_or_spec, mcfg: ModelConfig, tcfg: TrainConfig, n_trials: int = 20,
               base_seed: int = 0, n_jobs: int = 1) -> SuiteReport:
    """Train ``n_trials`` times; trial ``i`` uses seed ``base_seed + i`` for
    both the data split and the initialisation."""
    return run_ablations(dataset_or_spec, mcfg, tcfg, n_trials, base_seed,
                         variants=(tcfg.variant,), n_jobs=n_jobs)


def run_ablations(dataset_or_spec, mcfg: ModelConfig, tcfg: TrainConfig, n_trials: int = 20,
                  base_seed: int = 0, variants=VARIANTS, n_jobs: int = 1) -> SuiteReport:
    """Run every variant on the same per-trial datasets and seeds."""
    if n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {n_trials}")
    seeds = [base_seed + i for i in range(n_trials)]
    datasets = [trial_dataset(dataset_or_spec, s) for s in seeds]
    report = SuiteReport()
    for variant in variants:
        vcfg = replace(tcfg, variant=variant)
        jobs = [(ds, mcfg, vcfg, s) for ds, s in zip(datasets, seeds)]
        report.trials[variant] = _run_jobs(jobs, n_jobs)
        log.info("%s: mean accuracy %.4f", variant, report.mean(variant))
    return report


def write_trial_traces(report: SuiteReport, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for variant, trials in report.trials.items():
        for t in trials:
            if t.trace is not None:
                paths.append(write_trace_csv(t.trace, directory / f"trace_{variant}_seed{t.seed}.csv"))
    return paths


def export_embeddings(params: StnParams, dataset: HdaDataset, path, slope: float) -> Path:
    """Write projected source and target rows as CSV.

    Columns: ``domain`` (source/target_labeled/target_unlabeled), ``label``
    (-1 for unlabeled rows), then ``z0 .. z{d-1}``.
    """
    Z_s = project_source(params, dataset.X_s, slope)
    Z_l = project_target(params, dataset.X_l, slope)
    Z_u = project_target(params, dataset.X_u, slope) if dataset.n_u else np.zeros((0, Z_s.shape[1]))
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "label"] + [f"z{j}" for j in range(Z_s.shape[1])])
            blocks = (("source", Z_s, dataset.y_s), ("target_labeled", Z_l, dataset.y_l),
                      ("target_unlabeled", Z_u, np.full(Z_u.shape[0], -1)))
            for domain, Z, y in blocks:
                for row, label in zip(Z, y):
                    w.writerow([domain, int(label)] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise FileError(f"cannot write embeddings to {path}: {exc}") from exc
    return path


def read_embeddings(path):
    """Return ``(domains, labels, Z)`` from a file written by :func:`export_embeddings`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    domains = [r[0] for r in rows]
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    Z = np.array([[float(v) for v in r[2:]] for r in rows])
    return domains, labels, Z


def toy_dataset(seed=0, n_classes=3, d_s=7, d_t=5, n_s=12, n_l=6, n_u=10) -> HdaDataset:
    """Small random dataset for gradient checks; labels cycle through classes."""
    rng = SeededRng(seed)
    return HdaDataset(
        rng.normal(n_s, d_s), np.arange(n_s) % n_classes,
        rng.normal(n_l, d_t), np.arange(n_l) % n_classes,
        rng.normal(n_u, d_t), n_classes,
    )


def check_objective_gradients(params: StnParams, problem: Problem, soft, tcfg: TrainConfig,
                              h=1e-6, tol=1e-5, n_coords=None, seed=0) -> GradCheckReport:
    """Finite-difference check of the full training objective, soft labels held fixed."""
    _, grads = objective(params, problem, soft, tcfg)

    def total(vec):
        return objective(params.unflat(vec), problem, soft, tcfg, need_grad=False)[0].total

    return grad_check(total, grads.flat(), params.flat(), h=h, tol=tol,
                      n_coords=n_coords, rng=SeededRng(seed))


def gradcheck_suite(tcfg: TrainConfig | None = None, variants=VARIANTS, seed=0, h=1e-6, tol=1e-5,
                    n_coords=None):
    """Check the objective at r in {0, R/2, R} for each variant on the toy problem.

    Returns a list of ``(variant, r, report)``.
    """
    tcfg = tcfg or TrainConfig(iters=300)
    ds = toy_dataset(seed)
    mcfg = ModelConfig(d_s=ds.d_s, d_t=ds.d_t, n_classes=ds.n_classes, d=4, hidden=6, init_seed=seed)
    params = init_params(mcfg)
    problem = Problem.from_dataset(ds, mcfg.slope)
    R = tcfg.iters
    out = []
    for variant in variants:
        vcfg = replace(tcfg, variant=variant)
        for r in (0, R // 2, R):
            soft = soft_labels_for(params, problem, r, R, variant)
            out.append((variant, r, check_objective_gradients(params, problem, soft, vcfg, h, tol, n_coords, seed)))
    return out
