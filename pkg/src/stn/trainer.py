"""Adam and the full-batch training loop, including the ablation variants."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import HdaDataset
from .diffcore import DEFAULT_SLOPE, AffineParams
from .errors import ConfigError, DivergenceError
from .losses import (
    ClassIndex,
    LabeledProjectedBatch,
    ObjectiveBreakdown,
    classification_loss,
    soft_mmd,
)
from .model import (
    ModelConfig,
    SoftLabelMatrix,
    StnParams,
    classify,
    compute_soft_labels,
    init_params,
    project_target,
    projection_backward,
    projection_forward,
)
from .numeric import Matrix, as_matrix

log = logging.getLogger(__name__)

# the six variants compared by the ablation suite
VARIANTS = ("full", "r_eq_R", "r_eq_0", "beta_0", "hard", "qm_only")
# labeled-target-only network, used as the no-transfer baseline
TARGET_ONLY = "target_only"
ALL_VARIANTS = VARIANTS + (TARGET_ONLY,)


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.001
    tau: float = 0.001
    lr: float = 0.001
    iters: int = 300
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    variant: str = "full"

    def __post_init__(self):
        if self.beta < 0 or self.tau < 0:
            raise ConfigError("beta and tau must be >= 0")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("invalid Adam moment parameters")
        if self.variant not in ALL_VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(ALL_VARIANTS)}")


def _tree_map(fn, first, *rest):
    if isinstance(first, StnParams):
        return first.map(fn, *rest)
    return fn(first, *rest)


def _leaves(tree):
    if isinstance(tree, StnParams):
        return [a for _, a in tree.arrays()]
    return [np.asarray(tree)]


@dataclass
class AdamState:
    m: StnParams | np.ndarray
    v: StnParams | np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(_tree_map(np.zeros_like, params), _tree_map(np.zeros_like, params), 0)


def adam_step(state: AdamState, params, grads, cfg: TrainConfig):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Works on :class:`StnParams` or on a bare array.
    """
    t = state.t + 1
    if not all(np.all(np.isfinite(g)) for g in _leaves(grads)):
        raise DivergenceError("non-finite gradient", iteration=t)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = _tree_map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, state.m, grads)
    v = _tree_map(lambda v_, g: b2 * v_ + (1.0 - b2) * (g * g), state.v, grads)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t

    def update(p, m_, v_):
        return p - cfg.lr * (m_ / c1) / (np.sqrt(v_ / c2) + cfg.adam_eps)

    return _tree_map(update, params, m, v), AdamState(m, v, t)


@dataclass(frozen=True)
class Problem:
    """Training matrices derived from a dataset. Holds no unlabeled truth."""

    X_s: Matrix
    X_l: Matrix
    X_u: Matrix
    Y_s: Matrix
    Y_l: Matrix
    index: ClassIndex
    slope: float

    @classmethod
    def from_dataset(cls, ds: HdaDataset, slope: float):
        index = ClassIndex.from_labels(ds.y_s, ds.y_l, ds.n_classes)
        return cls(ds.X_s, ds.X_l, ds.X_u, index.source, index.target, index, slope)

    @property
    def n_classes(self):
        return self.Y_s.shape[1]


def effective_r(variant: str, r: int, R: int) -> int:
    if variant == "r_eq_R":
        return R
    if variant == "r_eq_0":
        return 0
    return r


def soft_labels_for(params: StnParams, problem: Problem, r: int, R: int, variant: str) -> SoftLabelMatrix:
    """Soft labels for iteration ``r`` as the given variant sees them."""
    if problem.X_u.shape[0] == 0:
        soft = SoftLabelMatrix(np.zeros((0, problem.n_classes)), effective_r(variant, r, R), R)
    else:
        soft = compute_soft_labels(params, problem.X_u, effective_r(variant, r, R), R, problem.slope)
    return soft.hardened() if variant == "hard" else soft


def objective(params: StnParams, problem: Problem, soft: SoftLabelMatrix, cfg: TrainConfig,
              iteration: int = 0, need_grad: bool = True):
    """Evaluate the training objective at ``params`` with fixed soft labels.

    Returns ``(ObjectiveBreakdown, grads)``; ``grads`` is ``None`` when
    ``need_grad`` is false.
    """
    variant = cfg.variant
    beta = 0.0 if variant in ("beta_0", TARGET_ONLY) else cfg.beta
    n_s, n_l = problem.X_s.shape[0], problem.X_l.shape[0]

    Z_s, cache_s = projection_forward(params.phi_s1, params.phi_s2, problem.X_s, problem.slope)
    Z_t, cache_t = projection_forward(params.phi_t1, params.phi_t2,
                                      np.vstack([problem.X_l, problem.X_u]), problem.slope)
    Z_l, Z_u = Z_t[:n_l], Z_t[n_l:]

    if variant == TARGET_ONLY:
        batch = LabeledProjectedBatch(Z_l, problem.Y_l)
    else:
        batch = LabeledProjectedBatch.stack(Z_s, Z_l, problem.Y_s, problem.Y_l)
    cls = classification_loss(batch, params, cfg.tau)
    mmd = soft_mmd(Z_s, Z_l, Z_u, problem.index, soft, use_conditional=variant != "qm_only")

    total = cls.cls_loss + cls.reg_term + beta * (mmd.q_m + mmd.q_c)
    record = ObjectiveBreakdown(iteration, cls.cls_loss, cls.reg_term, mmd.q_m, mmd.q_c, total)
    if not need_grad:
        return record, None

    dZ_s = beta * mmd.dZ_s
    dZ_t = beta * np.vstack([mmd.dZ_l, mmd.dZ_u])
    if variant == TARGET_ONLY:
        dZ_t[:n_l] += cls.dZ_a
    else:
        dZ_s += cls.dZ_a[:n_s]
        dZ_t[:n_l] += cls.dZ_a[n_s:]

    _, gs1, gs2 = projection_backward(cache_s, dZ_s)
    _, gt1, gt2 = projection_backward(cache_t, dZ_t)
    proj = StnParams(
        phi_s1=gs1, phi_s2=gs2, phi_t1=gt1, phi_t2=gt2,
        clf=AffineParams(np.zeros_like(params.clf.weight), np.zeros_like(params.clf.bias)),
    )
    grads = cls.dparams.map(np.add, proj)
    return record, grads


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    params: StnParams | None = None
    model_config: ModelConfig | None = None
    train_config: TrainConfig | None = None

    def __len__(self):
        return len(self.records)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])


TRACE_COLUMNS = ("r", "cls_loss", "q_m", "q_c", "reg", "total")


def write_trace_csv(trace: TrainTrace, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace.records:
            w.writerow([rec.iteration] + [repr(float(v)) for v in
                                          (rec.cls_loss, rec.q_m, rec.q_c, rec.reg_term, rec.total)])
    return path


def read_trace_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ObjectiveBreakdown(int(r["r"]), float(r["cls_loss"]), float(r["reg"]),
                           float(r["q_m"]), float(r["q_c"]), float(r["total"]))
        for r in rows
    ]


def train(dataset: HdaDataset, mcfg: ModelConfig, tcfg: TrainConfig, params: StnParams | None = None) -> TrainTrace:
    """Minimise the objective for ``tcfg.iters`` full-batch Adam steps.

    At 1-based iteration ``r`` the soft labels are recomputed from the current
    parameters and weighted by ``r / R`` (subject to the variant), then held
    constant for that step's gradient.
    """
    if (dataset.d_s, dataset.d_t, dataset.n_classes) != (mcfg.d_s, mcfg.d_t, mcfg.n_classes):
        raise ConfigError(
            f"model expects (d_s, d_t, C) = {(mcfg.d_s, mcfg.d_t, mcfg.n_classes)}, "
            f"dataset has {(dataset.d_s, dataset.d_t, dataset.n_classes)}"
        )
    problem = Problem.from_dataset(dataset, mcfg.slope)
    params = init_params(mcfg) if params is None else params
    state = AdamState.zeros_like(params)
    R = tcfg.iters
    trace = TrainTrace(model_config=mcfg, train_config=tcfg)
    # overflow is caught below as divergence, so numpy need not warn about it
    with np.errstate(over="ignore", invalid="ignore"):
        for r in range(1, R + 1):
            soft = soft_labels_for(params, problem, r, R, tcfg.variant)
            record, grads = objective(params, problem, soft, tcfg, iteration=r)
            if not np.isfinite(record.total):
                raise DivergenceError("non-finite objective", iteration=r)
            trace.records.append(record)
            params, state = adam_step(state, params, grads, tcfg)
    trace.params = params
    log.debug("trained %s: total %.6g -> %.6g", tcfg.variant, trace.records[0].total, trace.records[-1].total)
    return trace


def predict(params: StnParams, X, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    """Class indices for target-domain rows; ties go to the lowest index."""
    probs = classify(params, project_target(params, as_matrix(X, "X"), slope))
    return probs.argmax(axis=1)

