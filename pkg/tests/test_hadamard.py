import numpy as np
import pytest
import scipy.linalg

from fedsketch import hadamard
from fedsketch.hadamard import (
    _fwht_compiled,
    _fwht_numpy,
    derotate,
    fwht,
    padded_dim,
    rotate,
    rotation_spec,
    sign_diagonal,
)

BACKENDS = [pytest.param(_fwht_numpy, id="numpy")]
if _fwht_compiled is not None:
    BACKENDS.append(pytest.param(_fwht_compiled, id="compiled"))


@pytest.fixture(params=BACKENDS)
def fwht_impl(request):
    return request.param


def apply(impl, v):
    out = np.ascontiguousarray(v, dtype=np.float32)
    impl(out)
    return out


def test_basis_vector(fwht_impl):
    np.testing.assert_allclose(
        apply(fwht_impl, [1, 0, 0, 0]), [0.5, 0.5, 0.5, 0.5], atol=0
    )


def test_constant_vector(fwht_impl):
    np.testing.assert_allclose(apply(fwht_impl, [1, 1, 1, 1]), [2, 0, 0, 0], atol=0)


def test_matches_explicit_hadamard_matrix(fwht_impl):
    # independent oracle: dense H_d / sqrt(d) multiply
    rng = np.random.default_rng(3)
    for d in (2, 4, 8, 16, 64, 256):
        v = rng.standard_normal(d).astype(np.float32)
        expected = scipy.linalg.hadamard(d).astype(np.float64) @ v.astype(np.float64)
        expected /= np.sqrt(d)
        np.testing.assert_allclose(apply(fwht_impl, v), expected, atol=1e-4 * np.abs(expected).max())


def test_involution_and_norm(fwht_impl):
    rng = np.random.default_rng(11)
    for exp in range(1, 17):
        d = 2**exp
        v = rng.standard_normal(d).astype(np.float32)
        t = apply(fwht_impl, v)
        assert abs(np.linalg.norm(t) - np.linalg.norm(v)) <= 1e-5 * np.linalg.norm(v)
        back = apply(fwht_impl, t)
        np.testing.assert_allclose(back, v, atol=1e-5 * np.abs(v).max())


@pytest.mark.skipif(_fwht_compiled is None, reason="compiled kernel not built")
def test_backends_bit_identical():
    rng = np.random.default_rng(19)
    for d in (2, 8, 1024, 2**14):
        v = rng.standard_normal(d).astype(np.float32)
        np.testing.assert_array_equal(apply(_fwht_compiled, v), apply(_fwht_numpy, v))


def test_rejects_non_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        fwht(np.zeros(3, dtype=np.float32))


def test_large_round_trip():
    # invariant holds up to 2^20
    rng = np.random.default_rng(23)
    v = rng.standard_normal(2**20).astype(np.float32)
    back = fwht(fwht(v))
    assert np.abs(back - v).max() <= 1e-5


class TestRotation:
    def test_padded_dim(self):
        assert padded_dim(1) == 1
        assert padded_dim(1000) == 1024
        assert padded_dim(1024) == 1024

    def test_round_trip_with_padding(self):
        rng = np.random.default_rng(5)
        h = rng.standard_normal(1000).astype(np.float32)
        spec = rotation_spec(seed=77, d=1000)
        assert spec.padded == 1024
        back = derotate(rotate(h, spec), spec, 1000)
        assert np.abs(back - h).max() < 1e-5

    def test_identity_diagonal_reduces_to_fwht(self, monkeypatch):
        monkeypatch.setattr(
            hadamard, "sign_diagonal", lambda seed, n: np.ones(n, dtype=np.float32)
        )
        h = np.random.default_rng(9).standard_normal(256).astype(np.float32)
        spec = rotation_spec(seed=1, d=256)
        np.testing.assert_array_equal(rotate(h, spec), fwht(h))

    def test_spike_spreads_mass(self):
        c = 100.0
        h = np.zeros(1024, dtype=np.float32)
        h[0] = c
        rotated = rotate(h, rotation_spec(seed=13, d=1024))
        np.testing.assert_allclose(np.abs(rotated), c / 32.0, rtol=1e-6)

    def test_diagonal_is_signs(self):
        d = sign_diagonal(4, 512)
        assert set(np.unique(d)) == {-1.0, 1.0}

    def test_dim_mismatch_rejected(self):
        spec = rotation_spec(seed=0, d=16)
        with pytest.raises(ValueError):
            derotate(np.zeros(8, dtype=np.float32), spec, 16)
        with pytest.raises(ValueError):
            rotate(np.zeros(64, dtype=np.float32), spec)
