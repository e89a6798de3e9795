"""Bit-exact serialization of encoded updates and uplink byte accounting.

Every encoded update crosses the client/server boundary as one message per
layer. The layout is normative and pinned by golden tests:

    offset  size  field
    0       4     magic "FSU1"
    4       1     scheme: 0 raw, 1 low-rank, 2 mask, 3 sketch
    5       4     rows, u32 little-endian
    9       4     cols, u32 little-endian
    13      ...   scheme-dependent u64 fields, little-endian:
                    raw       none
                    low-rank  factor seed
                    mask      pattern seed
                    sketch    flags (bit 0 = rotation applied),
                              rotation seed, subsample seed
    ...     1     quantization bits b, 0 = unquantized
    ...     8     h_min, h_max as f32 (present iff b > 0)
    ...     4     mode fraction as f32
    ...     8     payload length in bits, u64
    ...     ...   payload, packed little-endian within bytes,
                  zero-padded to a byte boundary

Unquantized payloads are raw little-endian f32 values (32 bits each);
quantized payloads carry b bits per kept element. Headers are counted
separately from payloads in the ledger because compression-factor claims
concern the bits needed for the update values themselves.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .hadamard import padded_dim
from .sketch import QuantParams, SketchConfig, SketchEncoded
from .structured import (
    LowRankEncoded,
    MaskEncoded,
    count_from_fraction,
    rank_for,
)
from .tensorops import DTYPE, as_matrix

MAGIC = b"FSU1"
SCHEME_RAW = 0
SCHEME_LOW_RANK = 1
SCHEME_MASK = 2
SCHEME_SKETCH = 3
_FLAG_ROTATE = 1


class WireError(Exception):
    """Base class for malformed messages."""


class BadMagicError(WireError):
    pass


class UnknownSchemeError(WireError):
    pass


class TruncatedPayloadError(WireError):
    pass


class CorruptPayloadError(WireError):
    pass


@dataclass(eq=False)
class RawEncoded:
    """Uncompressed layer update: all values, 4 bytes each."""

    rows: int
    cols: int
    values: np.ndarray


def encode_raw(update: np.ndarray) -> RawEncoded:
    update = as_matrix(update)
    return RawEncoded(update.shape[0], update.shape[1], update.ravel())


def decode_raw(enc: RawEncoded) -> np.ndarray:
    return enc.values.reshape(enc.rows, enc.cols)


@dataclass(frozen=True)
class CompressionConfig:
    """Scheme selection for compressible layers of a model."""

    scheme: str = "none"  # none | lowrank | mask | sketch
    mode_fraction: float = 1.0
    bits: int | None = None
    rotate: bool = False
    exempt_below_fraction: float = 0.0001

    def __post_init__(self):
        if self.scheme not in ("none", "lowrank", "mask", "sketch"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.mode_fraction <= 1.0:
            raise ValueError(f"mode_fraction must be in (0, 1], got {self.mode_fraction}")
        if self.bits is not None and not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in [1, 8], got {self.bits}")
        if not 0.0 <= self.exempt_below_fraction <= 1.0:
            raise ValueError(
                f"exempt_below_fraction must be in [0, 1], got {self.exempt_below_fraction}"
            )
        if self.scheme != "sketch" and (self.bits is not None or self.rotate):
            raise ValueError("bits/rotate apply to the sketch scheme only")

    def sketch_config(self) -> SketchConfig:
        return SketchConfig(rotate=self.rotate, fraction=self.mode_fraction, bits=self.bits)


def pack_bits(indices: np.ndarray, bits: int) -> bytes:
    """Pack b-bit level indices, little-endian within bytes, zero-padded."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    idx = np.ascontiguousarray(indices, dtype=np.uint8)
    if idx.size and int(idx.max()) >= 1 << bits:
        raise ValueError(f"index {int(idx.max())} does not fit in {bits} bits")
    per_value = np.unpackbits(idx[:, None], axis=1, bitorder="little", count=bits)
    return np.packbits(per_value.ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of pack_bits for a known value count."""
    raw = np.frombuffer(data, dtype=np.uint8)
    flat = np.unpackbits(raw, bitorder="little", count=count * bits)
    weights = (1 << np.arange(bits)).astype(np.uint8)
    return (flat.reshape(count, bits) * weights).sum(axis=1, dtype=np.uint16).astype(np.uint8)


Encoded = RawEncoded | LowRankEncoded | MaskEncoded | SketchEncoded


def _f32(x: float) -> float:
    return float(np.float32(x))


def payload_bits(enc: Encoded) -> int:
    """Exact bit length of the message payload, headers excluded."""
    if isinstance(enc, RawEncoded):
        return 32 * enc.values.size
    if isinstance(enc, LowRankEncoded):
        return 32 * enc.coeffs.size
    if isinstance(enc, MaskEncoded):
        return 32 * enc.values.size
    if isinstance(enc, SketchEncoded):
        per_value = 32 if enc.config.bits is None else enc.config.bits
        return per_value * enc.payload.size
    raise TypeError(f"not an encoded update: {type(enc).__name__}")


def serialize(enc: Encoded) -> bytes:
    out = bytearray()
    out += MAGIC

    if isinstance(enc, RawEncoded):
        out += struct.pack("<BII", SCHEME_RAW, enc.rows, enc.cols)
        out += struct.pack("<B", 0)
        out += struct.pack("<f", 1.0)
        payload = np.ascontiguousarray(enc.values, dtype=DTYPE).tobytes()
    elif isinstance(enc, LowRankEncoded):
        out += struct.pack("<BII", SCHEME_LOW_RANK, enc.rows, enc.cols)
        out += struct.pack("<Q", enc.seed)
        out += struct.pack("<B", 0)
        out += struct.pack("<f", _f32(enc.fraction))
        payload = np.ascontiguousarray(enc.coeffs, dtype=DTYPE).tobytes()
    elif isinstance(enc, MaskEncoded):
        out += struct.pack("<BII", SCHEME_MASK, enc.rows, enc.cols)
        out += struct.pack("<Q", enc.seed)
        out += struct.pack("<B", 0)
        out += struct.pack("<f", _f32(enc.fraction))
        payload = np.ascontiguousarray(enc.values, dtype=DTYPE).tobytes()
    elif isinstance(enc, SketchEncoded):
        flags = _FLAG_ROTATE if enc.config.rotate else 0
        out += struct.pack("<BII", SCHEME_SKETCH, enc.rows, enc.cols)
        out += struct.pack("<QQQ", flags, enc.rotation_seed, enc.subsample_seed)
        if enc.config.bits is None:
            out += struct.pack("<B", 0)
            payload = np.ascontiguousarray(enc.payload, dtype=DTYPE).tobytes()
        else:
            out += struct.pack("<Bff", enc.config.bits, _f32(enc.quant.h_min), _f32(enc.quant.h_max))
            payload = pack_bits(enc.payload, enc.config.bits)
        out += struct.pack("<f", _f32(enc.config.fraction))
    else:
        raise TypeError(f"not an encoded update: {type(enc).__name__}")

    out += struct.pack("<Q", payload_bits(enc))
    out += payload
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncatedPayloadError(
                f"message ends at byte {len(self.data)}, needed {self.pos + size}"
            )
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def tail(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise TruncatedPayloadError(
                f"payload needs {size} bytes, only {len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        if self.pos != len(self.data):
            raise CorruptPayloadError(f"{len(self.data) - self.pos} trailing bytes")
        return chunk


def deserialize(data: bytes) -> Encoded:
    r = _Reader(data)
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    scheme, rows, cols = r.take("<BII")
    if scheme not in (SCHEME_RAW, SCHEME_LOW_RANK, SCHEME_MASK, SCHEME_SKETCH):
        raise UnknownSchemeError(f"unknown scheme tag {scheme}")
    if rows < 1 or cols < 1:
        raise CorruptPayloadError(f"bad dims {rows}x{cols}")

    if scheme == SCHEME_RAW:
        seeds = ()
    elif scheme == SCHEME_SKETCH:
        seeds = r.take("<QQQ")
    else:
        seeds = r.take("<Q")

    (bits,) = r.take("<B")
    if bits > 8 or (bits and scheme != SCHEME_SKETCH):
        raise CorruptPayloadError(f"bad quantization bits {bits} for scheme {scheme}")
    h_min = h_max = None
    if bits > 0:
        h_min, h_max = r.take("<ff")
    (fraction,) = r.take("<f")
    (nbits,) = r.take("<Q")
    payload = r.tail((nbits + 7) // 8)

    per_value = 32 if bits == 0 else bits
    if nbits % per_value:
        raise CorruptPayloadError(f"payload of {nbits} bits is not divisible by {per_value}")
    count = nbits // per_value

    if bits == 0:
        values = np.frombuffer(payload, dtype="<f4", count=count).astype(DTYPE)

    if scheme == SCHEME_RAW:
        if count != rows * cols:
            raise CorruptPayloadError(f"raw payload has {count} values for {rows}x{cols}")
        return RawEncoded(rows, cols, values)
    if scheme == SCHEME_LOW_RANK:
        if count % cols or not 1 <= count // cols <= rows:
            raise CorruptPayloadError(f"low-rank payload of {count} values for {rows}x{cols}")
        return LowRankEncoded(rows, cols, seeds[0], values.reshape(count // cols, cols), fraction)
    if scheme == SCHEME_MASK:
        if count > rows * cols:
            raise CorruptPayloadError(f"mask payload has {count} values for {rows}x{cols}")
        return MaskEncoded(rows, cols, seeds[0], fraction, values)

    flags, rotation_seed, subsample_seed = seeds
    rotate = bool(flags & _FLAG_ROTATE)
    dim = padded_dim(rows * cols) if rotate else rows * cols
    if count > dim:
        raise CorruptPayloadError(f"sketch payload has {count} values for dim {dim}")
    try:
        config = SketchConfig(rotate=rotate, fraction=fraction, bits=bits or None)
    except ValueError as exc:
        raise CorruptPayloadError(str(exc)) from exc
    if bits == 0:
        return SketchEncoded(rows, cols, config, rotation_seed, subsample_seed, None, values)
    quant = QuantParams(bits, h_min, h_max)
    return SketchEncoded(
        rows, cols, config, rotation_seed, subsample_seed, quant, unpack_bits(payload, bits, count)
    )


def payload_compression_factor(cfg: CompressionConfig, dims: tuple[int, int]) -> float:
    """Ratio of raw 32-bit payload size to the scheme's payload size, headers excluded."""
    rows, cols = dims
    n = rows * cols
    if cfg.scheme == "none":
        return 1.0
    if cfg.scheme == "lowrank":
        return n / (rank_for(cfg.mode_fraction, rows, cols) * cols)
    if cfg.scheme == "mask":
        return n / count_from_fraction(cfg.mode_fraction, n)
    dim = padded_dim(n) if cfg.rotate else n
    kept = count_from_fraction(cfg.mode_fraction, dim)
    return 32 * n / ((32 if cfg.bits is None else cfg.bits) * kept)


@dataclass
class LedgerEntry:
    round_index: int
    client: int
    layer: str
    header_bytes: int
    payload_bytes: int


@dataclass
class ByteLedger:
    """Exact per-message uplink accounting, header and payload separated."""

    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, round_index: int, client: int, layer: str, message: bytes, nbits: int) -> None:
        payload = (nbits + 7) // 8
        self.entries.append(
            LedgerEntry(round_index, client, layer, len(message) - payload, payload)
        )

    @property
    def header_total(self) -> int:
        return sum(e.header_bytes for e in self.entries)

    @property
    def payload_total(self) -> int:
        return sum(e.payload_bytes for e in self.entries)

    @property
    def total(self) -> int:
        return self.header_total + self.payload_total
