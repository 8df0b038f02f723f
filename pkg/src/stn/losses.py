"""Classification loss and the centroid-based alignment losses.

Every loss returns its value together with gradients w.r.t. the projected
features it consumed; the trainer chains those through the projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .diffcore import AffineParams, softmax_xent_backward, softmax_xent_forward
from .errors import ConfigError, EmptyInputError, RangeError, ShapeError
from .model import SoftLabelMatrix, StnParams
from .numeric import Matrix, as_matrix, rowwise_mean

DEN_EPS = 1e-8


def one_hot(labels, n_classes) -> Matrix:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise RangeError(f"labels must lie in [0, {n_classes}), got {labels.min()}..{labels.max()}")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass(frozen=True)
class LabeledProjectedBatch:
    """Projected labeled rows, source rows first, then labeled target rows."""

    Z_a: Matrix
    Y_a: Matrix

    @classmethod
    def stack(cls, Z_s, Z_l, Y_s, Y_l):
        return cls(np.vstack([Z_s, Z_l]), np.vstack([Y_s, Y_l]))


@dataclass(frozen=True)
class ClassIndex:
    """Per-class membership of labeled source and labeled target rows.

    Stored as one-hot membership matrices so class centroids are one matmul.
    """

    source: Matrix  # (n_s, C)
    target: Matrix  # (n_l, C)

    @classmethod
    def from_labels(cls, y_s, y_l, n_classes):
        S = one_hot(y_s, n_classes)
        L = one_hot(y_l, n_classes)
        for k in range(n_classes):
            if S[:, k].sum() < 1:
                raise ConfigError(f"class {k} has no labeled source samples")
            if L[:, k].sum() < 1:
                raise ConfigError(f"class {k} has no labeled target samples")
        return cls(S, L)

    @property
    def n_classes(self):
        return self.source.shape[1]

    @property
    def n_source_per_class(self):
        return self.source.sum(axis=0)

    @property
    def n_target_per_class(self):
        return self.target.sum(axis=0)

    def members(self, k):
        """Index lists ``(source_rows, target_rows)`` of class ``k``."""
        return np.flatnonzero(self.source[:, k]), np.flatnonzero(self.target[:, k])


@dataclass
class ObjectiveBreakdown:
    iteration: int
    cls_loss: float
    reg_term: float
    q_m: float
    q_c: float
    total: float


class ClassificationResult(NamedTuple):
    cls_loss: float
    reg_term: float
    dZ_a: Matrix
    dparams: StnParams  # classifier gradient plus weight decay on every layer


class MarginalResult(NamedTuple):
    value: float
    dZ_s: Matrix
    dZ_t: Matrix


class ConditionalResult(NamedTuple):
    value: float
    dZ_s: Matrix
    dZ_l: Matrix
    dZ_u: Matrix


class SoftMMDResult(NamedTuple):
    value: float
    q_m: float
    q_c: float
    dZ_s: Matrix
    dZ_l: Matrix
    dZ_u: Matrix


def classification_loss(batch: LabeledProjectedBatch, p: StnParams, tau: float) -> ClassificationResult:
    """Mean cross-entropy of the shared classifier plus ``tau`` times the
    summed squared weights of all five layers (biases excluded)."""
    if tau < 0:
        raise RangeError(f"tau must be >= 0, got {tau}")
    n = batch.Z_a.shape[0]
    if n == 0:
        raise EmptyInputError("classification loss over an empty batch")
    logits = batch.Z_a @ p.clf.weight + p.clf.bias
    total_ce, cache = softmax_xent_forward(logits, batch.Y_a)
    dlogits = softmax_xent_backward(cache, 1.0 / n)

    decay = {
        name: AffineParams(2.0 * tau * layer.weight, np.zeros_like(layer.bias))
        for name, layer in p.layers()
    }
    decay["clf"] = AffineParams(
        decay["clf"].weight + batch.Z_a.T @ dlogits,
        dlogits.sum(axis=0, keepdims=True),
    )
    grads = StnParams(**decay)
    dZ_a = dlogits @ p.clf.weight.T
    return ClassificationResult(total_ce / n, tau * p.weight_sq_norm(), dZ_a, grads)


def marginal_mmd(Z_s, Z_t) -> MarginalResult:
    """Squared distance between the source and target centroids."""
    Z_s = as_matrix(Z_s, "Z_s")
    Z_t = as_matrix(Z_t, "Z_t")
    if Z_s.shape[0] == 0 or Z_t.shape[0] == 0:
        raise EmptyInputError("marginal MMD needs at least one row per domain")
    if Z_s.shape[1] != Z_t.shape[1]:
        raise ShapeError(f"projected dims differ: {Z_s.shape[1]} vs {Z_t.shape[1]}")
    diff = rowwise_mean(Z_s) - rowwise_mean(Z_t)
    value = float((diff ** 2).sum())
    dZ_s = np.broadcast_to(2.0 * diff / Z_s.shape[0], Z_s.shape).copy()
    dZ_t = np.broadcast_to(-2.0 * diff / Z_t.shape[0], Z_t.shape).copy()
    return MarginalResult(value, dZ_s, dZ_t)


def class_centroids(Z_s, Z_l, Z_u, idx: ClassIndex, soft: SoftLabelMatrix):
    """Return ``(source_centroids, target_centroids, target_denominators)``.

    Target centroids blend labeled target rows with unlabeled rows weighted
    by the adaptive coefficients.
    """
    A = soft.weights
    if A.shape != (Z_u.shape[0], idx.n_classes):
        raise ShapeError(f"soft labels {A.shape} do not match {Z_u.shape[0]} unlabeled rows")
    n_s_k = idx.n_source_per_class
    src = (idx.source.T @ Z_s) / n_s_k[:, None]
    # guard only bites if a denominator is (near) zero, so the hard-label
    # reduction stays exact
    den = np.maximum(idx.n_target_per_class + A.sum(axis=0), DEN_EPS)
    tgt = (idx.target.T @ Z_l + A.T @ Z_u) / den[:, None]
    return src, tgt, den


def conditional_mmd(Z_s, Z_l, Z_u, idx: ClassIndex, soft: SoftLabelMatrix) -> ConditionalResult:
    """Sum over classes of squared distances between class centroids."""
    Z_s, Z_l, Z_u = (as_matrix(z, n) for z, n in ((Z_s, "Z_s"), (Z_l, "Z_l"), (Z_u, "Z_u")))
    if Z_s.shape[0] != idx.source.shape[0] or Z_l.shape[0] != idx.target.shape[0]:
        raise ShapeError("class index does not match the number of labeled rows")
    src, tgt, den = class_centroids(Z_s, Z_l, Z_u, idx, soft)
    diff = src - tgt  # (C, d)
    value = float((diff ** 2).sum())
    g_src = 2.0 * diff / idx.n_source_per_class[:, None]
    g_tgt = -2.0 * diff / den[:, None]
    return ConditionalResult(
        value,
        idx.source @ g_src,
        idx.target @ g_tgt,
        soft.weights @ g_tgt,
    )


def soft_mmd(Z_s, Z_l, Z_u, idx: ClassIndex, soft: SoftLabelMatrix, use_conditional=True) -> SoftMMDResult:
    """Marginal plus conditional alignment; the target domain is ``[Z_l; Z_u]``.

    ``use_conditional=False`` drops the conditional term (reported as 0).
    """
    Z_l = as_matrix(Z_l, "Z_l")
    n_l = Z_l.shape[0]
    marg = marginal_mmd(Z_s, np.vstack([Z_l, as_matrix(Z_u, "Z_u")]))
    dZ_s = marg.dZ_s
    dZ_l = marg.dZ_t[:n_l]
    dZ_u = marg.dZ_t[n_l:]
    q_c = 0.0
    if use_conditional:
        cond = conditional_mmd(Z_s, Z_l, Z_u, idx, soft)
        q_c = cond.value
        dZ_s = dZ_s + cond.dZ_s
        dZ_l = dZ_l + cond.dZ_l
        dZ_u = dZ_u + cond.dZ_u
    return SoftMMDResult(marg.value + q_c, marg.value, q_c, dZ_s, dZ_l, dZ_u)
