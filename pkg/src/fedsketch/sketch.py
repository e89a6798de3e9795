"""Lossy post-training compression of a full update, and its exact decoding.

Encoding pipeline, in order: optionally rotate the flattened update
(randomized Hadamard, zero-padded to a power of two), subsample the rotated
vector without replacement with inverse-probability scaling, then
stochastically quantize the kept values onto a uniform grid spanning their
own min/max. Every lossy stage is unbiased, so the decoded update equals the
original in expectation; the lossless stages invert exactly.

The min/max range is computed over the values actually transmitted (after
subsampling), which is the tightest range available to the receiver. Padded
positions take part in subsampling; the slight overhead for lengths just
above a power of two is the price of keeping one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hadamard import RotationSpec, derotate, padded_dim, rotate, rotation_spec
from .structured import count_from_fraction
from .tensorops import DTYPE, as_matrix, draw_seed

ZERO_RANGE = 1e-12


@dataclass(frozen=True)
class SketchConfig:
    rotate: bool = False
    fraction: float = 1.0
    bits: int | None = None

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.bits is not None and not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in [1, 8], got {self.bits}")


@dataclass(frozen=True)
class QuantParams:
    bits: int
    h_min: float
    h_max: float

    @property
    def levels(self) -> np.ndarray:
        """The 2**bits grid values, float32, endpoints exact."""
        return np.linspace(self.h_min, self.h_max, 2**self.bits).astype(DTYPE)


def subsample_positions(n: int, count: int, seed: int) -> np.ndarray:
    """The seeded size-`count` uniform subset both endpoints regenerate."""
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=count, replace=False))


def subsample(h: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep a random share of coordinates, scaled to be unbiased when zero-filled.

    The scale is n/kept, the exact inverse keep probability; it equals
    1/fraction whenever fraction*n is an integer.
    """
    n = h.shape[0]
    count = count_from_fraction(fraction, n)
    positions = subsample_positions(n, count, seed)
    values = h[positions] * np.float32(n / count)
    return values, positions


def scatter(values: np.ndarray, positions: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=DTYPE)
    out[positions] = values
    return out


def quantize(h: np.ndarray, bits: int, rng: np.random.Generator) -> tuple[QuantParams, np.ndarray]:
    """Stochastically round each value to one of its two bracketing grid levels.

    The grid has 2**bits levels spanning [min(h), max(h)], so one bit gives
    exactly the two-level endpoint scheme. Rounding probabilities are linear
    in the distance to the brackets, making the result unbiased coordinate
    by coordinate. Endpoints quantize deterministically.
    """
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    h = np.ascontiguousarray(h, dtype=DTYPE)
    h_min = float(h.min())
    h_max = float(h.max())
    if h_max - h_min < ZERO_RANGE:
        return QuantParams(bits, h_min, h_min), np.zeros(h.shape[0], dtype=np.uint8)
    params = QuantParams(bits, h_min, h_max)
    spacing = (h_max - h_min) / (2**bits - 1)
    u = (h.astype(np.float64) - h_min) / spacing
    low = np.clip(np.floor(u), 0, 2**bits - 2)
    up_prob = u - low
    idx = low + (rng.random(h.shape[0]) < up_prob)
    return params, idx.astype(np.uint8)


def dequantize(params: QuantParams, indices: np.ndarray) -> np.ndarray:
    if params.h_max - params.h_min < ZERO_RANGE:
        return np.full(indices.shape[0], np.float32(params.h_min), dtype=DTYPE)
    return params.levels[indices]


@dataclass(eq=False)
class SketchEncoded:
    rows: int
    cols: int
    config: SketchConfig
    rotation_seed: int
    subsample_seed: int
    quant: QuantParams | None  # None when config.bits is None
    payload: np.ndarray  # uint8 level indices, or float32 kept values


def sketch_encode(update: np.ndarray, config: SketchConfig, rng: np.random.Generator) -> SketchEncoded:
    """Compress one layer update. `rng` supplies the seeds and the rounding noise."""
    update = as_matrix(update)
    rows, cols = update.shape
    flat = update.ravel()
    rotation_seed = draw_seed(rng)
    subsample_seed = draw_seed(rng)
    if config.rotate:
        work = rotate(flat, rotation_spec(rotation_seed, flat.shape[0]))
    else:
        work = flat
    values, _ = subsample(work, config.fraction, subsample_seed)
    if config.bits is None:
        return SketchEncoded(rows, cols, config, rotation_seed, subsample_seed, None, values)
    params, idx = quantize(values, config.bits, rng)
    return SketchEncoded(rows, cols, config, rotation_seed, subsample_seed, params, idx)


def sketch_decode(enc: SketchEncoded) -> np.ndarray:
    """Exact inverse of the lossless stages; unbiased across the lossy ones."""
    n = enc.rows * enc.cols
    dim = padded_dim(n) if enc.config.rotate else n
    values = enc.payload if enc.quant is None else dequantize(enc.quant, enc.payload)
    kept = values.shape[0]
    if kept > dim:
        raise ValueError(f"payload has {kept} values for {dim} positions")
    work = scatter(values, subsample_positions(dim, kept, enc.subsample_seed), dim)
    if enc.config.rotate:
        flat = derotate(work, RotationSpec(enc.rotation_seed, dim), n)
    else:
        flat = work
    return flat.reshape(enc.rows, enc.cols)


def quantization_mse(h: np.ndarray, config: SketchConfig, trials: int, seed: int = 0) -> float:
    """Empirical per-coordinate mean squared error of encode/decode over fresh seeds."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    h = np.ascontiguousarray(h, dtype=DTYPE)
    update = h.reshape(1, -1)
    total = 0.0
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        decoded = sketch_decode(sketch_encode(update, config, rng)).ravel()
        err = decoded.astype(np.float64) - h.astype(np.float64)
        total += float(err @ err)
    return total / (trials * h.shape[0])
