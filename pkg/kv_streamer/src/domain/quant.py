from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import QuantizationError

DEFAULT_BASE_BINS: tuple[float, float, float] = (0.5, 1.0, 1.5)
DEFAULT_MULTIPLIERS: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
DEFAULT_LEVEL_ID = 1

ANCHOR_BITS = 8
ANCHOR_MAX = 127
ANCHOR_EPS = 1e-8

SYMBOL_MIN = -32768
SYMBOL_MAX = 32767


@dataclass(frozen=True)
class EncodingLevel:
    """One size/quality tradeoff point; L0 is the highest quality."""

    id: int
    bin_multiplier: float

    @property
    def label(self) -> str:
        return f"L{self.id}"


def default_levels() -> list[EncodingLevel]:
    return [EncodingLevel(idx, mult) for idx, mult in enumerate(DEFAULT_MULTIPLIERS)]


def level_by_id(level_id: int, levels: list[EncodingLevel] | None = None) -> EncodingLevel:
    for level in levels or default_levels():
        if level.id == level_id:
            return level
    raise ValueError(f"unknown encoding level L{level_id}")


def layer_group(layer: int, n_layers: int) -> int:
    """Index (0, 1, 2) of the layer group a layer belongs to."""
    if 3 * layer < n_layers:
        return 0
    if 3 * layer < 2 * n_layers:
        return 1
    return 2


@dataclass(frozen=True)
class QuantConfig:
    n_layers: int
    per_layer_bin: tuple[float, ...]
    anchor_bits: int = ANCHOR_BITS

    def __post_init__(self) -> None:
        if len(self.per_layer_bin) != self.n_layers:
            raise QuantizationError(
                f"expected {self.n_layers} bins, got {len(self.per_layer_bin)}"
            )
        if any(not np.isfinite(b) or b <= 0 for b in self.per_layer_bin):
            raise QuantizationError(f"bins must be positive and finite: {self.per_layer_bin}")
        if self.anchor_bits != ANCHOR_BITS:
            raise QuantizationError(f"anchor_bits is fixed at {ANCHOR_BITS}")

    @classmethod
    def for_level(
        cls,
        n_layers: int,
        level: EncodingLevel,
        base_bins: tuple[float, float, float] = DEFAULT_BASE_BINS,
    ) -> QuantConfig:
        if not base_bins[0] <= base_bins[1] <= base_bins[2]:
            raise QuantizationError(f"base bins must be nondecreasing: {base_bins}")
        bins = tuple(
            base_bins[layer_group(layer, n_layers)] * level.bin_multiplier
            for layer in range(n_layers)
        )
        return cls(n_layers=n_layers, per_layer_bin=bins)

    def bins_array(self) -> np.ndarray:
        return np.asarray(self.per_layer_bin, dtype=np.float64)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _require_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise QuantizationError("cannot quantize NaN or Inf values")


def quantize_uniform(values: np.ndarray | float, bin: float | np.ndarray) -> np.ndarray:
    """Uniform quantization, rounding half away from zero, clipped to int16.

    ``bin`` may be a scalar or an array broadcastable against ``values``
    (e.g. per-layer bins shaped [layers, 1]).
    """
    arr = np.asarray(values, dtype=np.float64)
    bins = np.asarray(bin, dtype=np.float64)
    if np.any(bins <= 0):
        raise QuantizationError(f"bin must be positive, got {bin}")
    _require_finite(arr)
    symbols = _round_half_away(arr / bins)
    return np.clip(symbols, SYMBOL_MIN, SYMBOL_MAX).astype(np.int16)


def count_clipped(values: np.ndarray | float, bin: float | np.ndarray) -> int:
    arr = np.asarray(values, dtype=np.float64)
    symbols = _round_half_away(arr / np.asarray(bin, dtype=np.float64))
    return int(np.count_nonzero((symbols < SYMBOL_MIN) | (symbols > SYMBOL_MAX)))


def dequantize_uniform(symbols: np.ndarray | int, bin: float | np.ndarray) -> np.ndarray:
    return np.asarray(symbols, dtype=np.float64) * np.asarray(bin, dtype=np.float64)


def quantize_anchor(anchor_slice: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorwise 8-bit quantization of one token's [layers, channels] slice.

    Returns float32 per-layer scales and int8 symbols. Scales are float32
    because that is what the bitstream stores; encoder and decoder must
    dequantize against the same value.
    """
    arr = np.asarray(anchor_slice, dtype=np.float64)
    _require_finite(arr)
    row_max = np.abs(arr).max(axis=1) if arr.shape[1] else np.zeros(arr.shape[0])
    scales = (ANCHOR_MAX / np.maximum(row_max, ANCHOR_EPS)).astype(np.float32)
    scaled = arr * scales.astype(np.float64)[:, None]
    symbols = np.clip(_round_half_away(scaled), -ANCHOR_MAX, ANCHOR_MAX).astype(np.int8)
    return scales, symbols


def dequantize_anchor(scales: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    scales = np.asarray(scales)
    symbols = np.asarray(symbols)
    if symbols.ndim != 2 or scales.shape != (symbols.shape[0],):
        raise QuantizationError(
            f"anchor scales {scales.shape} do not match symbols {symbols.shape}"
        )
    return symbols.astype(np.float64) / scales.astype(np.float64)[:, None]
