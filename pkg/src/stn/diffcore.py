"""Differentiable blocks with hand-written forward and backward passes.

Each block is a pair of functions. ``*_forward`` returns ``(out, cache)`` and
the matching ``*_backward`` consumes that cache together with the upstream
gradient. There is no tape; callers compose blocks explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EvaluationError, RangeError, ShapeError, StateError
from .numeric import Matrix, SeededRng, as_matrix

LOG_EPS = 1e-12
DEFAULT_SLOPE = 0.2


@dataclass(frozen=True)
class AffineParams:
    weight: Matrix  # (in_dim, out_dim)
    bias: Matrix  # (1, out_dim)

    def __post_init__(self):
        w = as_matrix(self.weight, "weight")
        b = as_matrix(self.bias, "bias")
        if b.shape != (1, w.shape[1]):
            raise ShapeError(f"bias shape {b.shape} does not match weight {w.shape}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


@dataclass(frozen=True)
class AffineCache:
    x: Matrix
    weight: Matrix


@dataclass(frozen=True)
class LeakyCache:
    x: Matrix
    slope: float


@dataclass(frozen=True)
class SoftmaxXentCache:
    probs: Matrix
    labels: Matrix


def _check_upstream(cache, dout, expected_shape, block):
    if cache is None:
        raise StateError(f"{block} backward called without a forward record")
    dout = as_matrix(dout, "upstream gradient")
    if dout.shape != expected_shape:
        raise StateError(
            f"{block} backward got upstream {dout.shape}, forward produced {expected_shape}"
        )
    return dout


def affine_forward(p: AffineParams, x):
    x = as_matrix(x, "x")
    if x.shape[1] != p.in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, layer expects {p.in_dim}")
    return x @ p.weight + p.bias, AffineCache(x, p.weight)


def affine_backward(cache: AffineCache, dout):
    """Return ``(dx, AffineParams(dW, db))``."""
    expected = None if cache is None else (cache.x.shape[0], cache.weight.shape[1])
    dout = _check_upstream(cache, dout, expected, "affine")
    dx = dout @ cache.weight.T
    grads = AffineParams(cache.x.T @ dout, dout.sum(axis=0, keepdims=True))
    return dx, grads


def leaky_relu(x, slope=DEFAULT_SLOPE) -> Matrix:
    if not 0.0 <= slope < 1.0:
        raise RangeError(f"leaky relu slope must lie in [0, 1), got {slope}")
    x = as_matrix(x, "x")
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_forward(x, slope=DEFAULT_SLOPE):
    out = leaky_relu(x, slope)
    return out, LeakyCache(as_matrix(x), slope)


def leaky_relu_backward(cache: LeakyCache, dout):
    dout = _check_upstream(cache, dout, None if cache is None else cache.x.shape, "leaky_relu")
    return np.where(cache.x >= 0.0, dout, cache.slope * dout)


def softmax_rows(z) -> Matrix:
    z = as_matrix(z, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels) -> float:
    """Summed cross-entropy ``-sum y * log(max(p, 1e-12))`` over all rows."""
    probs = as_matrix(probs, "probs")
    labels = as_matrix(labels, "labels")
    if probs.shape != labels.shape:
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} differ")
    return float(-(labels * np.log(np.maximum(probs, LOG_EPS))).sum())


def softmax_xent_forward(logits, labels):
    """Softmax followed by summed cross-entropy; returns ``(loss, cache)``."""
    probs = softmax_rows(logits)
    labels = as_matrix(labels, "labels")
    return cross_entropy(probs, labels), SoftmaxXentCache(probs, labels)


def softmax_xent_backward(cache: SoftmaxXentCache, dloss=1.0):
    """Gradient w.r.t. the logits: ``probs - labels`` for one-hot labels.

    Entries clamped at ``1e-12`` contribute no gradient.
    """
    if cache is None:
        raise StateError("softmax_xent backward called without a forward record")
    p, y = cache.probs, cache.labels
    w = np.where(p >= LOG_EPS, y, 0.0)
    return dloss * (p * w.sum(axis=1, keepdims=True) - w)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e} "
            f"coords={self.n_checked} worst_index={self.worst_index}"
        )


def grad_check(
    objective: Callable[[np.ndarray], float],
    analytic_grad: np.ndarray,
    x0: np.ndarray,
    h: float = 1e-6,
    tol: float = 1e-5,
    n_coords: int | None = 100,
    rng: SeededRng | None = None,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    Parameters
    ----------
    objective : callable
        Maps a flat parameter vector to a scalar.
    analytic_grad : ndarray
        Gradient at ``x0``, same size as ``x0``.
    n_coords : int or None
        Number of coordinates to sample without replacement; ``None`` or a
        value at least ``x0.size`` checks every coordinate.

    Relative error per coordinate is
    ``|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)``.
    """
    if h <= 0:
        raise RangeError(f"finite-difference step must be positive, got {h}")
    x0 = np.array(x0, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g.shape != x0.shape:
        raise ShapeError(f"gradient size {g.size} does not match parameter size {x0.size}")

    if n_coords is None or n_coords >= x0.size:
        coords = np.arange(x0.size)
    else:
        rng = rng or SeededRng(0)
        coords = np.sort(rng.generator.choice(x0.size, size=n_coords, replace=False))

    def f(x):
        val = float(objective(x))
        if not np.isfinite(val):
            raise EvaluationError("objective returned a non-finite value")
        return val

    f(x0)
    worst, worst_idx = 0.0, -1
    x = x0.copy()
    for i in coords:
        x[i] = x0[i] + h
        fp = f(x)
        x[i] = x0[i] - h
        fm = f(x)
        x[i] = x0[i]
        fd = (fp - fm) / (2.0 * h)
        rel = abs(g[i] - fd) / max(1e-8, abs(g[i]) + abs(fd))
        if rel > worst or worst_idx < 0:
            worst, worst_idx = rel, int(i)
    return GradCheckReport(worst, worst_idx, len(coords), tol)
