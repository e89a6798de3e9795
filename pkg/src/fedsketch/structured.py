"""Structured client updates: low-rank factor pairs and random masks.

Both variants constrain the update during local training rather than
approximating it afterwards, so given the seed they decode losslessly. The
frozen left factor and the sparsity pattern are regenerated on the server
from a transmitted 64-bit seed; only the trained coefficients (low rank) or
the kept entries (mask) travel over the wire.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorops import DTYPE, as_matrix


def count_from_fraction(fraction: float, n: int) -> int:
    """Nearest-integer share of n, never empty, never more than n."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    return max(1, min(n, int(np.floor(fraction * n + 0.5))))


def rank_for(fraction: float, rows: int, cols: int) -> int:
    """Rank budget for a mode fraction: the share of the full matrix rank."""
    return count_from_fraction(fraction, min(rows, cols))


def sample_frozen_factor(rows: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random rows x k factor with N(0, 1/k) entries.

    Variance 1/k keeps the scale of the expanded product independent of the
    chosen rank.
    """
    if not 1 <= k <= rows:
        raise ValueError(f"rank must be in [1, {rows}], got {k}")
    return (rng.standard_normal((rows, k)) / np.sqrt(k)).astype(DTYPE)


def frozen_factor_from_seed(rows: int, k: int, seed: int) -> np.ndarray:
    return sample_frozen_factor(rows, k, np.random.default_rng(seed))


@dataclass
class LowRankFactors:
    """Frozen left factor plus trainable coefficients for one layer."""

    seed: int
    left: np.ndarray  # rows x k, regenerable from seed
    coeffs: np.ndarray  # k x cols, trained locally

    @property
    def rank(self) -> int:
        return self.left.shape[1]


def new_low_rank(rows: int, cols: int, k: int, seed: int) -> LowRankFactors:
    left = frozen_factor_from_seed(rows, k, seed)
    return LowRankFactors(seed, left, np.zeros((k, cols), dtype=DTYPE))


def expand_low_rank(f: LowRankFactors) -> np.ndarray:
    """Dense update represented by the factor pair."""
    if f.left.shape[1] != f.coeffs.shape[0]:
        raise ValueError(
            f"factor shapes not conformable: {f.left.shape} x {f.coeffs.shape}"
        )
    return f.left @ f.coeffs


def project_gradient(grad: np.ndarray, left: np.ndarray) -> np.ndarray:
    """Gradient with respect to the coefficients when the update is left @ coeffs.

    Chain rule through the fixed left factor: d loss / d coeffs = left.T @ grad.
    """
    if grad.shape[0] != left.shape[0]:
        raise ValueError(f"shape mismatch: grad {grad.shape}, left {left.shape}")
    return left.T @ grad


@dataclass
class MaskPattern:
    """Seeded sparsity pattern over the flattened matrix."""

    seed: int
    fraction: float
    shape: tuple[int, int]
    indices: np.ndarray  # sorted positions into the flattened matrix

    def dense(self) -> np.ndarray:
        """0/1 float mask in matrix shape, for gradient projection."""
        m = np.zeros(self.shape[0] * self.shape[1], dtype=DTYPE)
        m[self.indices] = 1.0
        return m.reshape(self.shape)


def mask_indices(n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=count, replace=False))


def gen_mask(shape: tuple[int, int], fraction: float, seed: int) -> MaskPattern:
    """Uniform random subset of positions, exact count, without replacement."""
    rows, cols = shape
    count = count_from_fraction(fraction, rows * cols)
    return MaskPattern(seed, fraction, (rows, cols), mask_indices(rows * cols, count, seed))


# Encoded forms. These are what the wire module serializes; decoding
# regenerates the frozen factor or the mask from the embedded seed.


@dataclass(eq=False)
class LowRankEncoded:
    rows: int
    cols: int
    seed: int
    coeffs: np.ndarray  # k x cols
    fraction: float = 1.0  # mode fraction, informational on the wire


@dataclass(eq=False)
class MaskEncoded:
    rows: int
    cols: int
    seed: int
    fraction: float
    values: np.ndarray  # kept entries, flattened-order


def encode_low_rank(f: LowRankFactors, shape: tuple[int, int], fraction: float = 1.0) -> LowRankEncoded:
    rows, cols = shape
    if f.coeffs.shape[1] != cols:
        raise ValueError(f"coeffs shape {f.coeffs.shape} inconsistent with cols={cols}")
    return LowRankEncoded(rows, cols, f.seed, np.ascontiguousarray(f.coeffs, dtype=DTYPE), fraction)


def decode_low_rank(enc: LowRankEncoded) -> np.ndarray:
    k = enc.coeffs.shape[0]
    left = frozen_factor_from_seed(enc.rows, k, enc.seed)
    return left @ enc.coeffs


def encode_mask(update: np.ndarray, pattern: MaskPattern) -> MaskEncoded:
    update = as_matrix(update, *pattern.shape)
    values = update.ravel()[pattern.indices]
    return MaskEncoded(pattern.shape[0], pattern.shape[1], pattern.seed, pattern.fraction, values)


def decode_mask(enc: MaskEncoded) -> np.ndarray:
    n = enc.rows * enc.cols
    if enc.values.shape[0] > n:
        raise ValueError(f"payload has {enc.values.shape[0]} values for {n} positions")
    indices = mask_indices(n, enc.values.shape[0], enc.seed)
    out = np.zeros(n, dtype=DTYPE)
    out[indices] = enc.values
    return out.reshape(enc.rows, enc.cols)
