"""Projection networks, the shared softmax classifier and soft labels."""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .diffcore import (
    DEFAULT_SLOPE,
    AffineParams,
    affine_backward,
    affine_forward,
    leaky_relu_backward,
    leaky_relu_forward,
    softmax_rows,
)
from .errors import ConfigError, RangeError, ShapeError
from .numeric import Matrix, SeededRng, as_matrix

LAYER_NAMES = ("phi_s1", "phi_s2", "phi_t1", "phi_t2", "clf")


@dataclass(frozen=True)
class ModelConfig:
    d_s: int
    d_t: int
    n_classes: int
    d: int = 256
    hidden: int | None = None  # None means "same as d"
    slope: float = DEFAULT_SLOPE
    init_seed: int = 0

    def __post_init__(self):
        for name in ("d_s", "d_t", "n_classes", "d"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if not 0.0 <= self.slope < 1.0:
            raise ConfigError(f"slope must lie in [0, 1), got {self.slope}")

    @property
    def h(self) -> int:
        return self.d if self.hidden is None else self.hidden

    def layer_shapes(self):
        return {
            "phi_s1": (self.d_s, self.h),
            "phi_s2": (self.h, self.d),
            "phi_t1": (self.d_t, self.h),
            "phi_t2": (self.h, self.d),
            "clf": (self.d, self.n_classes),
        }


@dataclass(frozen=True)
class StnParams:
    """All learnable weights. Also used, shape for shape, as the gradient buffer."""

    phi_s1: AffineParams
    phi_s2: AffineParams
    phi_t1: AffineParams
    phi_t2: AffineParams
    clf: AffineParams

    def layers(self):
        return [(name, getattr(self, name)) for name in LAYER_NAMES]

    def arrays(self):
        """Yield ``(name, array)`` in the fixed flattening order."""
        for name, layer in self.layers():
            yield f"{name}.weight", layer.weight
            yield f"{name}.bias", layer.bias

    @property
    def size(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def unflat(self, vec) -> "StnParams":
        """Build params with this instance's shapes from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.size:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {self.size}")
        out, pos = {}, 0
        for name, layer in self.layers():
            w_n, b_n = layer.weight.size, layer.bias.size
            w = vec[pos:pos + w_n].reshape(layer.weight.shape)
            pos += w_n
            b = vec[pos:pos + b_n].reshape(layer.bias.shape)
            pos += b_n
            out[name] = AffineParams(w.copy(), b.copy())
        return StnParams(**out)

    def map(self, fn, *others) -> "StnParams":
        """Apply ``fn`` to matching arrays of ``self`` and ``others``."""
        out = {}
        for name, layer in self.layers():
            peers = [getattr(o, name) for o in others]
            out[name] = AffineParams(
                fn(layer.weight, *[p.weight for p in peers]),
                fn(layer.bias, *[p.bias for p in peers]),
            )
        return StnParams(**out)

    def zeros_like(self) -> "StnParams":
        return self.map(np.zeros_like)

    def weight_sq_norm(self) -> float:
        return float(sum((layer.weight ** 2).sum() for _, layer in self.layers()))


def init_params(cfg: ModelConfig) -> StnParams:
    """Glorot-uniform weights, zero biases, deterministic in ``cfg.init_seed``."""
    rng = SeededRng(cfg.init_seed)
    layers = {}
    for name, (fan_in, fan_out) in cfg.layer_shapes().items():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers[name] = AffineParams(
            rng.uniform(fan_in, fan_out, -bound, bound), np.zeros((1, fan_out))
        )
    return StnParams(**layers)


def _check_cols(x, expected, what):
    x = as_matrix(x, what)
    if x.shape[1] != expected:
        raise ShapeError(f"{what} has {x.shape[1]} columns, expected {expected}")
    return x


def projection_forward(first: AffineParams, second: AffineParams, x, slope):
    a, c1 = affine_forward(first, x)
    hdn, c2 = leaky_relu_forward(a, slope)
    z, c3 = affine_forward(second, hdn)
    return z, (c1, c2, c3)


def projection_backward(caches, dz):
    c1, c2, c3 = caches
    dh, g2 = affine_backward(c3, dz)
    da = leaky_relu_backward(c2, dh)
    dx, g1 = affine_backward(c1, da)
    return dx, g1, g2


def project_source(p: StnParams, X_s, slope=DEFAULT_SLOPE) -> Matrix:
    X_s = _check_cols(X_s, p.phi_s1.in_dim, "source data")
    return projection_forward(p.phi_s1, p.phi_s2, X_s, slope)[0]


def project_target(p: StnParams, X_t, slope=DEFAULT_SLOPE) -> Matrix:
    X_t = _check_cols(X_t, p.phi_t1.in_dim, "target data")
    return projection_forward(p.phi_t1, p.phi_t2, X_t, slope)[0]


def classify(p: StnParams, Z) -> Matrix:
    Z = _check_cols(Z, p.clf.in_dim, "projected data")
    return softmax_rows(Z @ p.clf.weight + p.clf.bias)


@dataclass(frozen=True)
class SoftLabelMatrix:
    """Class-probability rows for the unlabeled target samples.

    ``weights`` holds the adaptive per-class coefficients ``(r / R) * probs``
    that phase unlabeled data into the conditional alignment term.
    """

    probs: Matrix
    r: int
    R: int

    def __post_init__(self):
        if self.R < 1 or not 0 <= self.r <= self.R:
            raise RangeError(f"need 0 <= r <= R and R >= 1, got r={self.r}, R={self.R}")
        object.__setattr__(self, "probs", as_matrix(self.probs, "probs"))

    @property
    def weights(self) -> Matrix:
        return (self.r / self.R) * self.probs

    def hardened(self) -> "SoftLabelMatrix":
        """Replace every row by the one-hot of its argmax (lowest index on ties)."""
        onehot = np.zeros_like(self.probs)
        onehot[np.arange(self.probs.shape[0]), self.probs.argmax(axis=1)] = 1.0
        return SoftLabelMatrix(onehot, self.r, self.R)

    def at(self, r: int) -> "SoftLabelMatrix":
        return SoftLabelMatrix(self.probs, r, self.R)


def compute_soft_labels(p: StnParams, X_u, r: int, R: int, slope=DEFAULT_SLOPE) -> SoftLabelMatrix:
    # a fresh array with no link back to p; callers treat it as a constant
    probs = classify(p, project_target(p, X_u, slope)).copy()
    return SoftLabelMatrix(probs, r, R)


def save_checkpoint(path, cfg: ModelConfig, params: StnParams) -> Path:
    """Write ``cfg`` and every matrix to an ``.npz`` container (bit-exact).

    Entries carry a fixed timestamp so identical inputs give identical bytes.
    """
    path = Path(path)
    arrays = {name: a for name, a in params.arrays()}
    arrays["__config__"] = np.array(json.dumps(asdict(cfg), sort_keys=True))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(cfg, params)``."""
    with np.load(Path(path), allow_pickle=False) as npz:
        raw = json.loads(str(npz["__config__"]))
        known = {f.name for f in fields(ModelConfig)}
        cfg = ModelConfig(**{k: v for k, v in raw.items() if k in known})
        layers = {
            name: AffineParams(npz[f"{name}.weight"], npz[f"{name}.bias"])
            for name in LAYER_NAMES
        }
    params = StnParams(**layers)
    for name, (fan_in, fan_out) in cfg.layer_shapes().items():
        if getattr(params, name).weight.shape != (fan_in, fan_out):
            raise ConfigError(f"checkpoint layer {name} does not match its stored config")
    return cfg, params
