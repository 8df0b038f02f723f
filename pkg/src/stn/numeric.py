"""Dense float64 matrix helpers and the seeded generator.

Matrices are plain row-major ``numpy.ndarray`` objects of dtype float64 with
``ndim == 2``; samples are rows.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, RangeError, ShapeError

Matrix = np.ndarray


def as_matrix(a, name="matrix") -> Matrix:
    """Coerce ``a`` to a C-contiguous 2-D float64 array (1-D becomes one row)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> Matrix:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def rowwise_mean(a) -> Matrix:
    """Arithmetic mean of the rows, returned as a ``1 x cols`` matrix."""
    a = as_matrix(a)
    if a.shape[0] == 0:
        raise EmptyInputError("rowwise_mean of a matrix with no rows")
    # shifted by the first row: exact when all rows are equal
    ref = a[:1]
    return ref + (a - ref).sum(axis=0, keepdims=True) / a.shape[0]


class SeededRng:
    """Counter-based (Philox) generator with an explicit 64-bit seed.

    Two instances built from the same seed yield identical streams.
    ``spawn`` derives independent child generators for parallel trials.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, rows, cols, lo=0.0, hi=1.0) -> Matrix:
        if not lo < hi:
            raise RangeError(f"uniform bounds need lo < hi, got [{lo}, {hi})")
        u = self._gen.random((rows, cols))
        out = lo + (hi - lo) * u
        # rounding in lo + (hi-lo)*u can land exactly on hi
        return np.where(out >= hi, np.nextafter(hi, lo), out)

    def normal(self, rows, cols, loc=0.0, scale=1.0) -> Matrix:
        return self._gen.normal(loc, scale, size=(rows, cols))

    def permutation(self, n) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "SeededRng":
        child = np.random.SeedSequence([self.seed, int(key)])
        return SeededRng(int(child.generate_state(1, np.uint64)[0]))


def rng_uniform(rng: SeededRng, rows, cols, lo, hi) -> Matrix:
    return rng.uniform(rows, cols, lo, hi)
