import struct

import numpy as np
import pytest

from fedsketch.sketch import SketchConfig, sketch_decode, sketch_encode
from fedsketch.structured import (
    MaskEncoded,
    decode_low_rank,
    decode_mask,
    encode_low_rank,
    encode_mask,
    gen_mask,
    new_low_rank,
)
from fedsketch.wire import (
    BadMagicError,
    ByteLedger,
    CompressionConfig,
    CorruptPayloadError,
    RawEncoded,
    TruncatedPayloadError,
    UnknownSchemeError,
    deserialize,
    encode_raw,
    pack_bits,
    payload_bits,
    payload_compression_factor,
    serialize,
    unpack_bits,
)


def roundtrip(enc):
    wire = serialize(enc)
    back = deserialize(wire)
    assert serialize(back) == wire
    return back


class TestRoundTrips:
    def test_raw(self):
        update = np.array([[1.0, -2.0], [0.5, 4.0]], dtype=np.float32)
        enc = encode_raw(update)
        wire = serialize(enc)
        # header: magic 4 + scheme/dims 9 + bits 1 + fraction 4 + length 8
        assert len(wire) == 26 + 16
        back = roundtrip(enc)
        np.testing.assert_array_equal(back.values, update.ravel())

    def test_low_rank(self):
        f = new_low_rank(16, 8, 4, seed=123456789)
        f.coeffs[:] = np.random.default_rng(1).standard_normal((4, 8)).astype(np.float32)
        back = roundtrip(encode_low_rank(f, (16, 8), fraction=0.25))
        np.testing.assert_array_equal(decode_low_rank(back), decode_low_rank(encode_low_rank(f, (16, 8))))

    def test_mask(self):
        update = np.random.default_rng(2).standard_normal((5, 5)).astype(np.float32)
        enc = encode_mask(update, gen_mask((5, 5), 0.4, seed=55))
        back = roundtrip(enc)
        np.testing.assert_array_equal(decode_mask(back), decode_mask(enc))

    def test_sketch_quantized(self):
        update = np.random.default_rng(3).standard_normal((10, 13)).astype(np.float32)
        enc = sketch_encode(update, SketchConfig(True, 0.25, 2), np.random.default_rng(4))
        back = roundtrip(enc)
        np.testing.assert_array_equal(sketch_decode(back), sketch_decode(enc))

    def test_sketch_unquantized(self):
        update = np.random.default_rng(5).standard_normal((4, 4)).astype(np.float32)
        enc = sketch_encode(update, SketchConfig(False, 0.5, None), np.random.default_rng(6))
        back = roundtrip(enc)
        np.testing.assert_array_equal(sketch_decode(back), sketch_decode(enc))

    def test_fuzz_all_schemes(self):
        rng = np.random.default_rng(99)
        for i in range(400):
            rows = int(rng.integers(1, 12))
            cols = int(rng.integers(1, 12))
            update = rng.standard_normal((rows, cols)).astype(np.float32)
            kind = i % 4
            if kind == 0:
                enc = encode_raw(update)
            elif kind == 1:
                k = int(rng.integers(1, min(rows, cols) + 1))
                f = new_low_rank(rows, cols, k, seed=int(rng.integers(2**63)))
                enc = encode_low_rank(f, (rows, cols))
            elif kind == 2:
                enc = encode_mask(update, gen_mask((rows, cols), float(rng.uniform(0.05, 1.0)), seed=i))
            else:
                cfg = SketchConfig(
                    rotate=bool(rng.integers(2)),
                    fraction=float(rng.uniform(0.05, 1.0)),
                    bits=[None, 1, 2, 4, 8][int(rng.integers(5))],
                )
                enc = sketch_encode(update, cfg, rng)
            roundtrip(enc)


class TestGoldenLayout:
    def test_raw_message_bytes(self):
        enc = encode_raw(np.array([[1.0, 2.0]], dtype=np.float32))
        expected = (
            b"FSU1"
            + struct.pack("<BII", 0, 1, 2)
            + struct.pack("<B", 0)
            + struct.pack("<f", 1.0)
            + struct.pack("<Q", 64)
            + np.array([1.0, 2.0], dtype="<f4").tobytes()
        )
        assert serialize(enc) == expected

    def test_mask_message_bytes(self):
        enc = MaskEncoded(2, 2, seed=7, fraction=0.5, values=np.array([3.0, -1.0], np.float32))
        expected = (
            b"FSU1"
            + struct.pack("<BII", 2, 2, 2)
            + struct.pack("<Q", 7)
            + struct.pack("<B", 0)
            + struct.pack("<f", 0.5)
            + struct.pack("<Q", 64)
            + np.array([3.0, -1.0], dtype="<f4").tobytes()
        )
        assert serialize(enc) == expected

    def test_one_bit_sketch_payload_is_d_over_eight_bytes(self):
        # 1024 elements at 1 bit: 128 payload bytes, 32x below raw f32
        update = np.random.default_rng(8).standard_normal((32, 32)).astype(np.float32)
        enc = sketch_encode(update, SketchConfig(False, 1.0, 1), np.random.default_rng(9))
        assert payload_bits(enc) == 1024
        wire = serialize(enc)
        (nbits,) = struct.unpack_from("<Q", wire, len(wire) - 128 - 8)
        assert nbits == 1024
        assert len(wire) - 128 == 58  # fixed header for a quantized sketch


class TestErrors:
    def test_bad_magic(self):
        wire = bytearray(serialize(encode_raw(np.ones((1, 1), np.float32))))
        wire[:4] = b"NOPE"
        with pytest.raises(BadMagicError):
            deserialize(bytes(wire))

    def test_unknown_scheme(self):
        wire = bytearray(serialize(encode_raw(np.ones((1, 1), np.float32))))
        wire[4] = 9
        with pytest.raises(UnknownSchemeError):
            deserialize(bytes(wire))

    def test_truncated_payload(self):
        wire = serialize(encode_raw(np.ones((2, 2), np.float32)))
        with pytest.raises(TruncatedPayloadError):
            deserialize(wire[:-1])

    def test_trailing_garbage(self):
        wire = serialize(encode_raw(np.ones((2, 2), np.float32)))
        with pytest.raises(CorruptPayloadError):
            deserialize(wire + b"\x00")

    def test_payload_length_mismatch(self):
        wire = bytearray(serialize(encode_raw(np.ones((2, 2), np.float32))))
        # claim one value fewer than the dims require
        struct.pack_into("<Q", wire, 18, 96)
        with pytest.raises((CorruptPayloadError, TruncatedPayloadError)):
            deserialize(bytes(wire[: 26 + 12]))


class TestBitPacking:
    @pytest.mark.parametrize("bits", range(1, 9))
    def test_round_trip(self, bits):
        rng = np.random.default_rng(bits)
        for count in (1, 7, 8, 9, 200):
            idx = rng.integers(0, 2**bits, size=count).astype(np.uint8)
            np.testing.assert_array_equal(unpack_bits(pack_bits(idx, bits), bits, count), idx)

    def test_pads_to_byte_boundary(self):
        assert len(pack_bits(np.array([1, 1, 1], np.uint8), 1)) == 1
        assert len(pack_bits(np.array([1] * 9, np.uint8), 1)) == 2

    def test_rejects_overflow(self):
        with pytest.raises(ValueError):
            pack_bits(np.array([4], np.uint8), 2)


class TestCompressionFactor:
    def test_one_bit_full_fraction_is_32x(self):
        cfg = CompressionConfig(scheme="sketch", mode_fraction=1.0, bits=1)
        assert payload_compression_factor(cfg, (1024, 1024)) == 32.0

    def test_two_bit_one_sixteenth_is_256x(self):
        cfg = CompressionConfig(scheme="sketch", mode_fraction=0.0625, bits=2, rotate=True)
        assert payload_compression_factor(cfg, (1024, 1024)) == 256.0

    def test_low_rank_quarter_rank_is_4x(self):
        cfg = CompressionConfig(scheme="lowrank", mode_fraction=0.25)
        assert payload_compression_factor(cfg, (64, 64)) == 4.0

    def test_raw_is_identity(self):
        assert payload_compression_factor(CompressionConfig(), (17, 3)) == 1.0

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            CompressionConfig(scheme="sketch", mode_fraction=0.0)
        with pytest.raises(ValueError):
            CompressionConfig(scheme="mask", bits=2)


def test_ledger_totals():
    ledger = ByteLedger()
    enc = encode_raw(np.ones((2, 3), np.float32))
    wire = serialize(enc)
    ledger.record(0, 4, "w", wire, payload_bits(enc))
    ledger.record(1, 5, "w", wire, payload_bits(enc))
    assert ledger.payload_total == 2 * 24
    assert ledger.header_total == 2 * (len(wire) - 24)
    assert ledger.total == 2 * len(wire)
