import numpy as np
import pytest

from src.domain.errors import QuantizationError
from src.domain.quant import (
    DEFAULT_LEVEL_ID,
    QuantConfig,
    count_clipped,
    default_levels,
    dequantize_anchor,
    dequantize_uniform,
    layer_group,
    level_by_id,
    quantize_anchor,
    quantize_uniform,
)


def test_uniform_round_trip_error_is_half_a_bin():
    values = np.random.default_rng(0).uniform(-10, 10, size=100_000)
    restored = dequantize_uniform(quantize_uniform(values, 1.5), 1.5)
    assert np.abs(restored - values).max() <= 0.75 + 1e-12


def test_uniform_rounds_half_away_from_zero():
    np.testing.assert_array_equal(
        quantize_uniform(np.array([0.5, -0.5, 1.5, -1.5, 0.49]), 1.0), [1, -1, 2, -2, 0]
    )


def test_uniform_clips_to_int16():
    symbols = quantize_uniform(np.array([1e9, -1e9]), 1.0)
    assert symbols.dtype == np.int16
    np.testing.assert_array_equal(symbols, [32767, -32768])
    assert count_clipped(np.array([1e9, -1e9, 3.0]), 1.0) == 2


def test_uniform_rejects_bad_input():
    with pytest.raises(QuantizationError):
        quantize_uniform(np.array([1.0]), 0.0)
    with pytest.raises(QuantizationError):
        quantize_uniform(np.array([np.inf]), 1.0)


def test_anchor_round_trip_error_bound():
    rows = np.random.default_rng(1).normal(scale=3.0, size=(6, 32))
    scales, symbols = quantize_anchor(rows)
    assert symbols.dtype == np.int8
    assert scales.dtype == np.float32
    error = np.abs(dequantize_anchor(scales, symbols) - rows)
    bound = np.abs(rows).max(axis=1) / 127
    assert np.all(error.max(axis=1) <= bound + 1e-9)


def test_anchor_all_zero_row_decodes_to_zero():
    scales, symbols = quantize_anchor(np.zeros((2, 4)))
    assert np.all(np.isfinite(scales))
    np.testing.assert_array_equal(dequantize_anchor(scales, symbols), np.zeros((2, 4)))


def test_layer_groups_split_in_thirds():
    assert [layer_group(i, 6) for i in range(6)] == [0, 0, 1, 1, 2, 2]
    assert [layer_group(i, 1) for i in range(1)] == [0]
    assert [layer_group(i, 3) for i in range(3)] == [0, 1, 2]


def test_default_ladder_and_level_lookup():
    levels = default_levels()
    assert [level.label for level in levels] == ["L0", "L1", "L2", "L3"]
    assert level_by_id(DEFAULT_LEVEL_ID).bin_multiplier == 1.0
    with pytest.raises(ValueError, match="L9"):
        level_by_id(9)


def test_level_bins_follow_layer_groups():
    qc = QuantConfig.for_level(6, level_by_id(1))
    assert qc.per_layer_bin == (0.5, 0.5, 1.0, 1.0, 1.5, 1.5)
    coarse = QuantConfig.for_level(6, level_by_id(3))
    assert coarse.per_layer_bin == tuple(4 * b for b in qc.per_layer_bin)


def test_quant_config_validation():
    with pytest.raises(QuantizationError):
        QuantConfig(2, (1.0,))
    with pytest.raises(QuantizationError):
        QuantConfig(1, (-1.0,))
    with pytest.raises(QuantizationError):
        QuantConfig.for_level(3, level_by_id(1), (1.5, 1.0, 0.5))
