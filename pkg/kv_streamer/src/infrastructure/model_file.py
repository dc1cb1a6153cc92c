"""Binary .sym serialization of a SymbolModel.

Layout (little-endian): magic ``CGSM``, u16 version, u32 layers, u32 channels,
u16 delta half-width S, u16 anchor half-width (127), u64 model hash, then the
anchor tables followed by the delta tables as u16 frequencies in
(kind, layer, channel, symbol) order.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from ..domain.entropy.model import ANCHOR_SLOTS, SymbolModel, delta_slots
from ..domain.errors import ModelFormatError, ModelMismatchError
from ..domain.quant import ANCHOR_MAX

logger = logging.getLogger(__name__)

SYM_MAGIC = b"CGSM"
SYM_VERSION = 1
_HEADER = struct.Struct("<4sHIIHHQ")


def encode_model(model: SymbolModel) -> bytes:
    header = _HEADER.pack(
        SYM_MAGIC,
        SYM_VERSION,
        model.n_layers,
        model.n_channels,
        model.half_width,
        ANCHOR_MAX,
        model.model_hash,
    )
    return (
        header
        + model.anchor_freqs.astype("<u2").tobytes()
        + model.delta_freqs.astype("<u2").tobytes()
    )


def decode_model(data: bytes) -> SymbolModel:
    if len(data) < _HEADER.size:
        raise ModelFormatError(f"payload of {len(data)} bytes is too short for a .sym header")
    magic, version, n_layers, n_channels, half_width, anchor_max, model_hash = (
        _HEADER.unpack_from(data, 0)
    )
    if magic != SYM_MAGIC:
        raise ModelFormatError(f"bad .sym magic {magic!r}")
    if version != SYM_VERSION:
        raise ModelFormatError(f"unsupported .sym version {version}")
    if anchor_max != ANCHOR_MAX:
        raise ModelFormatError(f"anchor alphabet half-width {anchor_max}, expected {ANCHOR_MAX}")
    if n_layers == 0 or n_channels == 0:
        raise ModelFormatError(f"invalid model dims ({n_layers}, {n_channels})")

    n_anchor = n_layers * n_channels * ANCHOR_SLOTS
    n_delta = n_layers * n_channels * delta_slots(half_width)
    expected = _HEADER.size + 2 * (n_anchor + n_delta)
    if len(data) != expected:
        raise ModelFormatError(f"model file is {len(data)} bytes, expected {expected}")

    anchor = np.frombuffer(data, dtype="<u2", count=n_anchor, offset=_HEADER.size)
    delta = np.frombuffer(data, dtype="<u2", count=n_delta, offset=_HEADER.size + 2 * n_anchor)
    try:
        return SymbolModel(
            n_layers=n_layers,
            n_channels=n_channels,
            half_width=half_width,
            anchor_freqs=anchor.reshape(n_layers, n_channels, ANCHOR_SLOTS).astype(np.uint16),
            delta_freqs=delta.reshape(n_layers, n_channels, -1).astype(np.uint16),
            model_hash=model_hash,
        )
    except ModelMismatchError as exc:
        raise ModelFormatError(f"corrupted model file: {exc}") from exc


def save_model(model: SymbolModel, path: str | Path) -> None:
    target = Path(path)
    target.write_bytes(encode_model(model))
    logger.info("Saved symbol model %016x to %s", model.model_hash, target)


def load_model(path: str | Path) -> SymbolModel:
    return decode_model(Path(path).read_bytes())
