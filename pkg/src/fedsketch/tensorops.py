"""Dense-matrix conventions and deterministic stream derivation.

Everything downstream assumes 32-bit floats in row-major (C) order, so the
flattening used by the codecs is `matrix.ravel()` and nothing else. Random
streams are derived from a single master seed plus integer key tuples, which
is what lets a client and the server regenerate the same random objects from
a handful of transmitted integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32

# Stream purposes. Keyed derivation keeps every consumer independent: reusing
# a (round, client, layer) tuple under a different purpose never collides.
P_DATASET = 0
P_PARTITION = 1
P_INIT = 2
P_SAMPLE = 3
P_LOCAL = 4
P_CODEC = 5


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent generator from a master seed and an integer key.

    Identical (seed, key) pairs yield identical streams; distinct keys yield
    statistically independent ones. Callers own the returned generator
    exclusively, parallel work derives sibling streams instead of sharing.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.default_rng(ss)


def draw_seed(rng: np.random.Generator) -> int:
    """Draw a transmittable 64-bit seed from a stream."""
    return int(rng.integers(0, 2**64, dtype=np.uint64))


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a contiguous float32 2D array and check finiteness."""
    m = np.ascontiguousarray(values, dtype=DTYPE)
    if m.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape != (rows, cols):
        raise ValueError(f"expected shape {(rows, cols)}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def reshape_kernel(tensor4d) -> np.ndarray:
    """Flatten a conv kernel [in, w, h, out] to an (in*w*h) x out matrix.

    Row-major: row index runs over (in, w, h) with `h` fastest, column index
    is the output channel. `inverse_reshape_kernel` undoes it element-exactly.
    """
    t = np.ascontiguousarray(tensor4d, dtype=DTYPE)
    if t.ndim != 4:
        raise ValueError(f"expected a 4D kernel, got ndim={t.ndim}")
    n_in, w, h, n_out = t.shape
    return t.reshape(n_in * w * h, n_out)


def inverse_reshape_kernel(matrix: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n_in, w, h, n_out = shape
    m = as_matrix(matrix, n_in * w * h, n_out)
    return m.reshape(shape)


@dataclass
class Layer:
    """One named weight matrix of the global model."""

    name: str
    values: np.ndarray
    compressible: bool = True

    def __post_init__(self):
        self.values = as_matrix(self.values)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass
class ModelParams:
    """Ordered collection of layers; the global model W."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")

    def clone(self) -> "ModelParams":
        return ModelParams(
            [Layer(l.name, l.values.copy(), l.compressible) for l in self.layers]
        )

    def total_params(self) -> int:
        return sum(layer.size for layer in self.layers)

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def mark_compressible(params: ModelParams, exempt_below_fraction: float) -> None:
    """Flag layers as compressible unless they are a tiny share of the model.

    Layers holding less than `exempt_below_fraction` of all parameters are
    always sent raw; compressing them saves next to nothing and hurts small
    variables such as biases disproportionately.
    """
    total = params.total_params()
    for layer in params.layers:
        layer.compressible = layer.size >= exempt_below_fraction * total
