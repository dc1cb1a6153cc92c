"""Change-based encoding of token groups.

Every group of ``group_size`` contiguous tokens keeps its first token (the
anchor) at 8-bit vectorwise precision. The remaining tokens are stored as
uniform-quantized deltas against the *dequantized* anchor, so encoder and
decoder share one reference and the non-anchor error is bounded by bin/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config.env import settings
from .errors import QuantizationError
from .kvtensor import ELEMENT_DTYPE, KVCache, KVDims
from .quant import (
    QuantConfig,
    count_clipped,
    dequantize_anchor,
    dequantize_uniform,
    quantize_anchor,
    quantize_uniform,
)


def split_groups(n_tokens: int, group_size: int | None = None) -> list[range]:
    size = settings.group_size if group_size is None else group_size
    if size < 1:
        raise ValueError(f"group_size must be >= 1, got {size}")
    return [range(start, min(start + size, n_tokens)) for start in range(0, n_tokens, size)]


@dataclass(frozen=True)
class TensorGroup:
    """Anchor and delta symbols of one tensor (K or V) inside a group."""

    anchor_scales: np.ndarray  # float32 [layers]
    anchor_symbols: np.ndarray  # int8 [layers, channels]
    delta_symbols: np.ndarray  # int16 [span - 1, layers, channels]
    clipped: int = 0


@dataclass(frozen=True)
class GroupPayload:
    token_span: range
    k: TensorGroup
    v: TensorGroup

    def __post_init__(self) -> None:
        span = len(self.token_span)
        if span < 1:
            raise QuantizationError("a group must contain at least one token")
        for part in (self.k, self.v):
            if part.delta_symbols.shape[0] != span - 1:
                raise QuantizationError(
                    f"group {self.token_span} carries {part.delta_symbols.shape[0]} deltas, "
                    f"expected {span - 1}"
                )

    @property
    def clipped(self) -> int:
        return self.k.clipped + self.v.clipped


def _encode_tensor(tensor: np.ndarray, qc: QuantConfig) -> TensorGroup:
    scales, anchor_symbols = quantize_anchor(tensor[0])
    reference = dequantize_anchor(scales, anchor_symbols)
    deltas = tensor[1:].astype(np.float64) - reference[None, :, :]
    bins = qc.bins_array()[None, :, None]
    return TensorGroup(
        anchor_scales=scales,
        anchor_symbols=anchor_symbols,
        delta_symbols=quantize_uniform(deltas, bins),
        clipped=count_clipped(deltas, bins),
    )


def _decode_tensor(part: TensorGroup, qc: QuantConfig) -> np.ndarray:
    reference = dequantize_anchor(part.anchor_scales, part.anchor_symbols)
    bins = qc.bins_array()[None, :, None]
    deltas = dequantize_uniform(part.delta_symbols, bins)
    out = np.empty((deltas.shape[0] + 1, *reference.shape), dtype=np.float64)
    out[0] = reference
    out[1:] = reference[None, :, :] + deltas
    return out.astype(ELEMENT_DTYPE)


def encode_group(kv_slice: KVCache, qc: QuantConfig, token_start: int = 0) -> GroupPayload:
    if kv_slice.dims.n_layers != qc.n_layers:
        raise QuantizationError(
            f"quant config covers {qc.n_layers} layers, slice has {kv_slice.dims.n_layers}"
        )
    if kv_slice.dims.n_tokens < 1:
        raise QuantizationError("cannot encode an empty group")
    return GroupPayload(
        token_span=range(token_start, token_start + kv_slice.dims.n_tokens),
        k=_encode_tensor(kv_slice.k, qc),
        v=_encode_tensor(kv_slice.v, qc),
    )


def decode_group(payload: GroupPayload, qc: QuantConfig) -> KVCache:
    n_layers, n_channels = payload.k.anchor_symbols.shape
    if n_layers != qc.n_layers or payload.v.anchor_symbols.shape != (n_layers, n_channels):
        raise QuantizationError(
            f"payload shape {payload.k.anchor_symbols.shape} does not match config "
            f"with {qc.n_layers} layers"
        )
    dims = KVDims(len(payload.token_span), n_layers, n_channels)
    return KVCache(dims, _decode_tensor(payload.k, qc), _decode_tensor(payload.v, qc))
