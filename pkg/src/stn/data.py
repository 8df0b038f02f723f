"""Heterogeneous-domain datasets: container, CSV I/O, sampling, synthesis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SamplingError, ShapeError
from .numeric import Matrix, SeededRng, as_matrix

SOURCE_FILE = "source.csv"
LABELED_FILE = "target_labeled.csv"
UNLABELED_FILE = "target_unlabeled.csv"
TRUTH_FILE = "target_unlabeled_truth.csv"


class HeldOutLabels:
    """Ground truth of the unlabeled target rows, kept behind an explicit call.

    Training code never calls :meth:`reveal`; only scoring does.
    """

    __slots__ = ("_labels",)

    def __init__(self, labels):
        self._labels = np.asarray(labels, dtype=np.int64).ravel().copy()
        self._labels.setflags(write=False)

    def reveal(self) -> np.ndarray:
        return self._labels

    def __len__(self):
        return self._labels.size

    def __repr__(self):
        return f"HeldOutLabels(n={self._labels.size})"


def _labels(y):
    y = np.asarray(y, dtype=np.int64).ravel().copy()
    y.setflags(write=False)
    return y


@dataclass(frozen=True)
class HdaDataset:
    X_s: Matrix
    y_s: np.ndarray
    X_l: Matrix
    y_l: np.ndarray
    X_u: Matrix
    n_classes: int
    y_u_truth: HeldOutLabels | None = field(default=None, repr=False)

    def __post_init__(self):
        X_s, X_l, X_u = as_matrix(self.X_s, "X_s"), as_matrix(self.X_l, "X_l"), as_matrix(self.X_u, "X_u")
        y_s, y_l = _labels(self.y_s), _labels(self.y_l)
        C = int(self.n_classes)
        if C < 1:
            raise ConfigError(f"n_classes must be >= 1, got {C}")
        if X_s.shape[0] != y_s.size:
            raise ShapeError(f"X_s has {X_s.shape[0]} rows but {y_s.size} labels")
        if X_l.shape[0] != y_l.size:
            raise ShapeError(f"X_l has {X_l.shape[0]} rows but {y_l.size} labels")
        if X_u.shape[0] and X_u.shape[1] != X_l.shape[1]:
            raise ShapeError(f"labeled target has {X_l.shape[1]} features, unlabeled has {X_u.shape[1]}")
        if X_u.shape[0] == 0:
            X_u = np.zeros((0, X_l.shape[1]))
        for name, y in (("y_s", y_s), ("y_l", y_l)):
            if y.size and (y.min() < 0 or y.max() >= C):
                raise ConfigError(f"{name} has labels outside [0, {C})")
            missing = sorted(set(range(C)) - set(y.tolist()))
            if missing:
                raise ConfigError(f"{name} is missing class(es) {missing}")
        truth = self.y_u_truth
        if truth is not None and not isinstance(truth, HeldOutLabels):
            truth = HeldOutLabels(truth)
        if truth is not None and len(truth) != X_u.shape[0]:
            raise ShapeError(f"{len(truth)} truth labels for {X_u.shape[0]} unlabeled rows")
        for name, value in (("X_s", X_s), ("y_s", y_s), ("X_l", X_l), ("y_l", y_l),
                            ("X_u", X_u), ("n_classes", C), ("y_u_truth", truth)):
            object.__setattr__(self, name, value)

    @property
    def d_s(self):
        return self.X_s.shape[1]

    @property
    def d_t(self):
        return self.X_l.shape[1]

    @property
    def n_s(self):
        return self.X_s.shape[0]

    @property
    def n_l(self):
        return self.X_l.shape[0]

    @property
    def n_u(self):
        return self.X_u.shape[0]

    @property
    def X_t(self):
        return np.vstack([self.X_l, self.X_u])

    def permute_unlabeled(self, order) -> "HdaDataset":
        order = np.asarray(order)
        truth = None if self.y_u_truth is None else self.y_u_truth.reveal()[order]
        return HdaDataset(self.X_s, self.y_s, self.X_l, self.y_l, self.X_u[order], self.n_classes, truth)


@dataclass(frozen=True)
class CsvSchema:
    """Layout of a delimited feature file. Labels sit in the final column."""

    n_classes: int
    has_header: bool = False
    delimiter: str = ","


def _read_rows(path, schema: CsvSchema, labeled: bool):
    path = Path(path)
    feats, labels, width = [], [], None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter, quoting=csv.QUOTE_NONE)
        for row in reader:
            lineno = reader.line_num
            if lineno == 1 and schema.has_header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(path, lineno, f"expected {width} columns, found {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ParseError(path, lineno, f"non-numeric cell {bad!r}") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(path, lineno, "non-finite value")
            if labeled:
                lab = values.pop()
                if lab != int(lab) or not 0 <= lab < schema.n_classes:
                    raise ParseError(path, lineno, f"label {row[-1]!r} outside 0..{schema.n_classes - 1}")
                labels.append(int(lab))
            feats.append(values)
    if not feats:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    return np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64)


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(source_path, target_labeled_path, target_unlabeled_path, schema: CsvSchema,
             truth_path=None) -> HdaDataset:
    X_s, y_s = _read_rows(source_path, schema, labeled=True)
    X_l, y_l = _read_rows(target_labeled_path, schema, labeled=True)
    X_u, _ = _read_rows(target_unlabeled_path, schema, labeled=False)
    truth = None
    if truth_path is not None:
        truth = []
        with open(truth_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        truth.append(int(line))
                    except ValueError:
                        raise ParseError(truth_path, lineno, f"bad label {line.strip()!r}") from None
    if X_u.shape[0] == 0:
        X_u = np.zeros((0, X_l.shape[1]))
    return HdaDataset(X_s, y_s, X_l, y_l, X_u, schema.n_classes, truth)


def _write_rows(path, X, y=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for i, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if y is not None:
                cells.append(str(int(y[i])))
            fh.write(",".join(cells) + "\n")


def write_csv(dataset: HdaDataset, directory) -> dict:
    """Write the three splits (and any held-out truth) into ``directory``.

    Floats are written with ``repr`` so a reload is exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "source": directory / SOURCE_FILE,
        "target_labeled": directory / LABELED_FILE,
        "target_unlabeled": directory / UNLABELED_FILE,
    }
    _write_rows(paths["source"], dataset.X_s, dataset.y_s)
    _write_rows(paths["target_labeled"], dataset.X_l, dataset.y_l)
    _write_rows(paths["target_unlabeled"], dataset.X_u)
    if dataset.y_u_truth is not None:
        paths["truth"] = directory / TRUTH_FILE
        with open(paths["truth"], "w", encoding="utf-8") as fh:
            fh.writelines(f"{int(v)}\n" for v in dataset.y_u_truth.reveal())
    return paths


def load_dir(directory, n_classes) -> HdaDataset:
    """Load a directory laid out by :func:`write_csv`."""
    directory = Path(directory)
    for name in (SOURCE_FILE, LABELED_FILE, UNLABELED_FILE):
        if not (directory / name).exists():
            raise ConfigError(f"missing data file {directory / name}")
    truth = directory / TRUTH_FILE
    return load_csv(
        directory / SOURCE_FILE,
        directory / LABELED_FILE,
        directory / UNLABELED_FILE,
        CsvSchema(n_classes),
        truth_path=truth if truth.exists() else None,
    )


def stratified_sample(labels, k_per_class, rng: SeededRng, n_classes=None):
    """Pick exactly ``k_per_class`` indices of every class.

    Returns ``(selected, complement)``, both sorted ascending.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    chosen = []
    for k in range(C):
        members = np.flatnonzero(labels == k)
        if members.size < k_per_class:
            raise SamplingError(f"class {k} has {members.size} members, need {k_per_class}")
        chosen.append(members[rng.permutation(members.size)[:k_per_class]])
    selected = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    mask = np.ones(labels.size, dtype=bool)
    mask[selected] = False
    return selected, np.flatnonzero(mask)


@dataclass(frozen=True)
class SynthSpec:
    """Shared-latent two-domain Gaussian benchmark.

    Each class has a latent mean; both domains observe the latent through
    their own random affine map plus isotropic noise.
    """

    n_classes: int = 4
    d_latent: int = 3
    d_s: int = 20
    d_t: int = 15
    separation: float = 3.0
    noise: float = 1.0
    latent_std: float = 1.0
    n_source_per_class: int = 100
    n_labeled_per_class: int = 3
    n_unlabeled_per_class: int = 50
    seed: int = 0

    def __post_init__(self):
        counts = ("n_classes", "d_latent", "d_s", "d_t", "n_source_per_class",
                  "n_labeled_per_class", "n_unlabeled_per_class")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_latent > min(self.d_s, self.d_t):
            raise ConfigError("d_latent must not exceed min(d_s, d_t)")
        if self.separation < 0 or self.noise < 0 or self.latent_std < 0:
            raise ConfigError("separation, noise and latent_std must be >= 0")


def _latent_means(spec: SynthSpec, rng: SeededRng):
    # random unit directions, scaled to the requested separation
    dirs = rng.normal(spec.n_classes, spec.d_latent)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return spec.separation * dirs


def gen_synthetic(spec: SynthSpec) -> HdaDataset:
    rng = SeededRng(spec.seed)
    means = _latent_means(spec, rng)
    scale = 1.0 / np.sqrt(spec.d_latent)
    A_s = rng.normal(spec.d_latent, spec.d_s, scale=scale)
    b_s = rng.normal(1, spec.d_s)
    A_t = rng.normal(spec.d_latent, spec.d_t, scale=scale)
    b_t = rng.normal(1, spec.d_t)

    def draw(per_class, A, b):
        y = np.repeat(np.arange(spec.n_classes), per_class)
        z = means[y] + spec.latent_std * rng.normal(y.size, spec.d_latent)
        x = z @ A + b + spec.noise * rng.normal(y.size, A.shape[1])
        order = rng.permutation(y.size)
        return x[order], y[order]

    X_s, y_s = draw(spec.n_source_per_class, A_s, b_s)
    X_t, y_t = draw(spec.n_labeled_per_class + spec.n_unlabeled_per_class, A_t, b_t)
    lab, unl = stratified_sample(y_t, spec.n_labeled_per_class, rng, spec.n_classes)
    return HdaDataset(X_s, y_s, X_t[lab], y_t[lab], X_t[unl], spec.n_classes, y_t[unl])


def resample_labeled(dataset: HdaDataset, rng: SeededRng) -> HdaDataset:
    """Redraw which target rows are labeled, keeping per-class counts.

    Needs the held-out truth of the unlabeled rows.
    """
    if dataset.y_u_truth is None:
        raise ConfigError("resampling the labeled split requires unlabeled ground truth")
    X_t = dataset.X_t
    y_t = np.concatenate([dataset.y_l, dataset.y_u_truth.reveal()])
    counts = np.bincount(dataset.y_l, minlength=dataset.n_classes)
    if np.any(counts != counts[0]):
        raise ConfigError("resampling needs the same number of labeled rows per class")
    lab, unl = stratified_sample(y_t, int(counts[0]), rng, dataset.n_classes)
    return HdaDataset(dataset.X_s, dataset.y_s, X_t[lab], y_t[lab], X_t[unl], dataset.n_classes, y_t[unl])
