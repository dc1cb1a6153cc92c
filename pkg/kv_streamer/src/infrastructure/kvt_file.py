from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from ..domain.errors import KVDimensionError, KVFormatError
from ..domain.kvtensor import ELEMENT_DTYPE, KVCache, KVDims

logger = logging.getLogger(__name__)

KVT_MAGIC = b"CGKT"
KVT_VERSION_F32 = 1
KVT_VERSION_F16 = 2
_HEADER = struct.Struct("<4sHIII")  # magic, version, N, l, c

_ELEMENT_DTYPES = {
    KVT_VERSION_F32: np.dtype("<f4"),
    KVT_VERSION_F16: np.dtype("<f2"),
}


def encode_kvt(kv: KVCache, *, half: bool = False) -> bytes:
    version = KVT_VERSION_F16 if half else KVT_VERSION_F32
    dtype = _ELEMENT_DTYPES[version]
    dims = kv.dims
    header = _HEADER.pack(KVT_MAGIC, version, dims.n_tokens, dims.n_layers, dims.n_channels)
    return header + kv.k.astype(dtype).tobytes() + kv.v.astype(dtype).tobytes()


def decode_kvt(data: bytes) -> KVCache:
    """Parse a .kvt payload. Version 2 (16-bit floats) is widened to 32-bit."""
    if len(data) < _HEADER.size:
        raise KVFormatError(f"payload of {len(data)} bytes is too short for a .kvt header")
    magic, version, n_tokens, n_layers, n_channels = _HEADER.unpack_from(data, 0)
    if magic != KVT_MAGIC:
        raise KVFormatError(f"bad .kvt magic {magic!r}")
    if version not in _ELEMENT_DTYPES:
        raise KVFormatError(f"unsupported .kvt version {version}")

    try:
        dims = KVDims(n_tokens, n_layers, n_channels)
    except KVDimensionError as exc:
        raise KVFormatError(f"invalid .kvt dims ({n_tokens}, {n_layers}, {n_channels})") from exc

    dtype = _ELEMENT_DTYPES[version]
    tensor_bytes = dims.n_elements * dtype.itemsize
    payload = len(data) - _HEADER.size
    if payload != 2 * tensor_bytes:
        raise KVFormatError(
            f"header dims {dims.shape} need {2 * tensor_bytes} payload bytes, found {payload}"
        )

    offset = _HEADER.size
    tensors = []
    for _ in range(2):
        flat = np.frombuffer(data, dtype=dtype, count=dims.n_elements, offset=offset)
        tensors.append(flat.reshape(dims.shape).astype(ELEMENT_DTYPE))
        offset += tensor_bytes
    try:
        return KVCache(dims, tensors[0], tensors[1])
    except KVDimensionError as exc:
        raise KVFormatError(str(exc)) from exc


def write_kvt(kv: KVCache, path: str | Path, *, half: bool = False) -> None:
    target = Path(path)
    target.write_bytes(encode_kvt(kv, half=half))
    logger.debug("Wrote %s (%s tokens, half=%s)", target, kv.dims.n_tokens, half)


def read_kvt(path: str | Path) -> KVCache:
    return decode_kvt(Path(path).read_bytes())
