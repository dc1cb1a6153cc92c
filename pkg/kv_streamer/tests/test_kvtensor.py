import numpy as np
import pytest

from src.domain.errors import KVDimensionError, KVFormatError
from src.domain.kvtensor import KVCache, KVDims, SynthSpec, kv_size_bytes, new_zeros, synth_ar1
from src.infrastructure.kvt_file import decode_kvt, encode_kvt, read_kvt, write_kvt


def test_dims_reject_nonpositive_layers():
    with pytest.raises(KVDimensionError):
        KVDims(10, 0, 4)
    with pytest.raises(KVDimensionError):
        KVDims(-1, 2, 4)


def test_zero_token_cache_is_valid():
    kv = new_zeros(KVDims(0, 2, 3))
    assert kv.k.shape == (0, 2, 3)
    assert kv.equals(new_zeros(KVDims(0, 2, 3)))


def test_cache_rejects_shape_mismatch_and_nan():
    dims = KVDims(2, 1, 2)
    with pytest.raises(KVDimensionError):
        KVCache(dims, np.zeros((2, 1, 3), np.float32), np.zeros((2, 1, 2), np.float32))
    bad = np.zeros((2, 1, 2), np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(KVDimensionError):
        KVCache(dims, bad, np.zeros_like(bad))


def test_cache_arrays_are_read_only():
    kv = new_zeros(KVDims(3, 1, 2))
    with pytest.raises(ValueError):
        kv.k[0, 0, 0] = 1.0


def test_token_slice_keeps_layers_and_channels():
    kv = synth_ar1(SynthSpec(KVDims(20, 2, 3), seed=1))
    part = kv.tokens(5, 12)
    assert part.dims == KVDims(7, 2, 3)
    np.testing.assert_array_equal(part.v, kv.v[5:12])


def test_synth_is_deterministic_per_seed():
    spec = SynthSpec(KVDims(50, 2, 4), seed=7)
    assert synth_ar1(spec).equals(synth_ar1(spec))
    assert not synth_ar1(spec).equals(synth_ar1(SynthSpec(KVDims(50, 2, 4), seed=8)))


def test_synth_lag_one_delta_variance_matches_ar1():
    kv = synth_ar1(SynthSpec(KVDims(4000, 2, 16), rho=0.98, sigma=1.0, seed=3))
    deltas = np.diff(kv.k.astype(np.float64), axis=0)
    # Var(x[t+1] - x[t]) = 2 * sigma^2 * (1 - rho)
    assert deltas.var() == pytest.approx(0.04, rel=0.15)


def test_synth_delta_to_anchor_variance_is_much_smaller_than_raw():
    kv = synth_ar1(SynthSpec(KVDims(5000, 2, 16), rho=0.98, seed=4))
    k = kv.k.astype(np.float64)
    groups = k[: (len(k) // 10) * 10].reshape(-1, 10, 2, 16)
    deltas = groups[:, 1:] - groups[:, :1]
    ratio = deltas.var() / k.var()
    expected = np.mean([2 * (1 - 0.98**d) for d in range(1, 10)])
    assert ratio <= 0.5
    assert ratio == pytest.approx(expected, rel=0.15)


@pytest.mark.parametrize("rho", [0.9, 0.95, 0.98])
def test_synth_lagged_difference_variance_follows_ar1_law(rho):
    kv = synth_ar1(SynthSpec(KVDims(6000, 2, 16), rho=rho, sigma=1.0, seed=11))
    series = np.concatenate([kv.k, kv.v], axis=1).astype(np.float64)
    for lag in range(1, 10):
        deltas = series[lag:] - series[:-lag]
        assert deltas.var() == pytest.approx(2 * (1 - rho**lag), rel=0.1), lag


def test_synth_spec_validation():
    with pytest.raises(KVDimensionError):
        SynthSpec(KVDims(1, 1, 1), rho=1.0)
    with pytest.raises(KVDimensionError):
        SynthSpec(KVDims(1, 1, 1), sigma=0.0)


def test_kv_size_bytes():
    assert kv_size_bytes(KVDims(10, 2, 3), 2) == 120
    assert kv_size_bytes(KVDims(5000, 32, 4096), 2) == 1_310_720_000
    with pytest.raises(KVDimensionError):
        kv_size_bytes(KVDims(10, 2, 3), 3)


def test_kvt_round_trip_is_exact(tmp_path):
    kv = synth_ar1(SynthSpec(KVDims(13, 3, 5), seed=2))
    path = tmp_path / "cache.kvt"
    write_kvt(kv, path)
    assert read_kvt(path).equals(kv)
    assert path.stat().st_size == 18 + 2 * 4 * 13 * 3 * 5


def test_kvt_half_precision_is_widened():
    kv = synth_ar1(SynthSpec(KVDims(8, 2, 2), seed=5))
    restored = decode_kvt(encode_kvt(kv, half=True))
    assert restored.k.dtype == np.float32
    np.testing.assert_allclose(restored.k, kv.k, atol=1e-2)


def test_kvt_rejects_bad_magic_version_and_length():
    data = encode_kvt(new_zeros(KVDims(2, 1, 1)))
    with pytest.raises(KVFormatError):
        decode_kvt(b"XXXX" + data[4:])
    with pytest.raises(KVFormatError):
        decode_kvt(data[:4] + b"\x09\x00" + data[6:])
    with pytest.raises(KVFormatError):
        decode_kvt(data[:-1])
    with pytest.raises(KVFormatError):
        decode_kvt(data[:10])
