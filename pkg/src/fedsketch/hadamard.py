"""Orthonormal fast Walsh-Hadamard transform and the randomized rotation.

The transform used everywhere is H_d / sqrt(d), which is symmetric and
orthogonal, so it is its own inverse and preserves the l2 norm. The
randomized rotation is rotate(h) = fwht(D * pad(h)) with D a seeded
diagonal of signs; the receiver undoes it with derotate(y) = (D * fwht(y))
truncated back to the original length.

The butterfly is the hot kernel of the whole simulator (it runs once per
layer per client per round when rotation is on). A Cython implementation is
used when the compiled extension is available and a vectorized numpy
fallback otherwise; both produce bit-identical float32 results. See
benchmarks/bench_fwht.py for a side-by-side timing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorops import DTYPE


def _fwht_numpy(v: np.ndarray) -> None:
    """In-place orthonormal FWHT, stage order identical to the compiled kernel."""
    d = v.shape[0]
    h = 1
    while h < d:
        a = v.reshape(-1, 2 * h)
        x = a[:, :h].copy()
        a[:, :h] = x + a[:, h:]
        a[:, h:] = x - a[:, h:]
        h *= 2
    v *= np.float32(1.0 / math.sqrt(d))


try:
    from ._fwht import fwht_inplace as _fwht_compiled
except ImportError:
    _fwht_compiled = None

_fwht_impl = _fwht_compiled if _fwht_compiled is not None else _fwht_numpy


def backend() -> str:
    """Name of the FWHT implementation selected at import time."""
    return "compiled" if _fwht_impl is _fwht_compiled and _fwht_compiled else "numpy"


def fwht_inplace(v: np.ndarray) -> None:
    """Transform a contiguous float32 vector of power-of-two length in place."""
    d = v.shape[0]
    if d & (d - 1):
        raise ValueError(f"length must be a power of two, got {d}")
    _fwht_impl(v)


def fwht(v) -> np.ndarray:
    """Out-of-place orthonormal Walsh-Hadamard transform."""
    out = np.array(v, dtype=DTYPE, copy=True, order="C")
    if out.ndim != 1:
        raise ValueError("expected a 1D vector")
    fwht_inplace(out)
    return out


def padded_dim(d: int) -> int:
    """Smallest power of two >= d."""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    return 1 << (d - 1).bit_length()


@dataclass(frozen=True)
class RotationSpec:
    """Seed for the sign diagonal plus the padded transform length."""

    seed: int
    padded: int


def rotation_spec(seed: int, d: int) -> RotationSpec:
    return RotationSpec(seed, padded_dim(d))


def sign_diagonal(seed: int, n: int) -> np.ndarray:
    """Seeded vector of +-1 signs."""
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 2, size=n) * 2 - 1).astype(DTYPE)


def rotate(h: np.ndarray, spec: RotationSpec) -> np.ndarray:
    """Apply the randomized rotation, zero-padding to the spec length."""
    d = h.shape[0]
    if d > spec.padded:
        raise ValueError(f"vector length {d} exceeds padded length {spec.padded}")
    out = np.zeros(spec.padded, dtype=DTYPE)
    out[:d] = h
    out *= sign_diagonal(spec.seed, spec.padded)
    fwht_inplace(out)
    return out


def derotate(y: np.ndarray, spec: RotationSpec, d: int) -> np.ndarray:
    """Invert `rotate` and truncate back to the original length."""
    if y.shape[0] != spec.padded:
        raise ValueError(f"expected length {spec.padded}, got {y.shape[0]}")
    out = np.array(y, dtype=DTYPE, copy=True, order="C")
    fwht_inplace(out)
    out *= sign_diagonal(spec.seed, spec.padded)
    return out[:d]
