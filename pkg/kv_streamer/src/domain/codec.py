"""Chunk codec: group encoding, arithmetic coding and the .cgc bitstream.

A chunk file is a header followed by one record per token group and a CRC-32
trailer::

    magic "CGCC" | u16 version | u32 chunk_id | u8 level | u32 token_offset
    u32 N | u32 layers | u32 channels | u16 group_size | u64 model_hash
    f32 bins[layers]
    per group: f32 k_scales[layers] | f32 v_scales[layers]
               u32 len | K stream | u32 len | V stream
    u32 crc32(all preceding bytes)

Each stream codes the group's anchors (layer-major, then channel) followed by
its deltas ordered by layer, channel, token.
"""

from __future__ import annotations

import logging
import struct
import zlib
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TypeVar

import numpy as np

from ..config.env import settings
from .entropy.coder import ac_decode, ac_encode
from .entropy.model import SymbolKind, SymbolModel, SymbolTensor
from .errors import (
    ChunkFormatError,
    CoverageError,
    KVDimensionError,
    ModelMismatchError,
    StreamExhaustedError,
)
from .grouping import GroupPayload, TensorGroup, decode_group, encode_group, split_groups
from .kvtensor import ELEMENT_DTYPE, KVCache, KVDims
from .quant import DEFAULT_BASE_BINS, EncodingLevel, QuantConfig, default_levels

logger = logging.getLogger(__name__)

CHUNK_MAGIC = b"CGCC"
CHUNK_VERSION = 1
_HEADER = struct.Struct("<4sHIBIIIIHQ")
_LENGTH = struct.Struct("<I")
_CRC = struct.Struct("<I")


@dataclass(frozen=True)
class ChunkHeader:
    chunk_id: int
    level_id: int
    token_offset: int
    dims: KVDims
    group_size: int
    model_hash: int
    bins: tuple[float, ...]

    @property
    def token_range(self) -> range:
        return range(self.token_offset, self.token_offset + self.dims.n_tokens)

    def quant_config(self) -> QuantConfig:
        return QuantConfig(n_layers=self.dims.n_layers, per_layer_bin=self.bins)


@dataclass(frozen=True)
class EncodedChunk:
    header: ChunkHeader
    data: bytes

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def chunk_id(self) -> int:
        return self.header.chunk_id

    @property
    def level_id(self) -> int:
        return self.header.level_id


@dataclass(frozen=True)
class DecodedChunk:
    chunk_id: int
    level_id: int
    token_range: range
    kv: KVCache


# --- stream layout ---


def _stream_symbols(part: TensorGroup) -> np.ndarray:
    deltas = np.transpose(part.delta_symbols, (1, 2, 0))
    return np.concatenate([part.anchor_symbols.ravel(), deltas.ravel()]).astype(np.int64)


def _stream_selectors(model: SymbolModel, n_deltas: int) -> np.ndarray:
    anchors = model.selector_grid(SymbolKind.ANCHOR).ravel()
    deltas = np.repeat(model.selector_grid(SymbolKind.DELTA).ravel(), n_deltas)
    return np.concatenate([anchors, deltas])


def _split_stream(
    symbols: Sequence[int], n_layers: int, n_channels: int, n_deltas: int
) -> tuple[np.ndarray, np.ndarray]:
    flat = np.asarray(symbols, dtype=np.int64)
    n_anchor = n_layers * n_channels
    anchors = flat[:n_anchor].reshape(n_layers, n_channels).astype(np.int8)
    deltas = flat[n_anchor:].reshape(n_layers, n_channels, n_deltas)
    return anchors, np.transpose(deltas, (2, 0, 1)).astype(np.int16)


# --- encoding ---


def _encode_group_record(payload: GroupPayload, model: SymbolModel) -> bytes:
    n_deltas = len(payload.token_span) - 1
    selectors = _stream_selectors(model, n_deltas).tolist()
    parts = [
        payload.k.anchor_scales.astype("<f4").tobytes(),
        payload.v.anchor_scales.astype("<f4").tobytes(),
    ]
    for tensor in (payload.k, payload.v):
        stream = ac_encode(_stream_symbols(tensor).tolist(), selectors, model.tables)
        parts.append(_LENGTH.pack(len(stream.data)))
        parts.append(stream.data)
    return b"".join(parts)


_T = TypeVar("_T")
_R = TypeVar("_R")


def _map_ordered(fn: Callable[[_T], _R], items: list[_T], workers: int) -> list[_R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def encode_chunk(
    kv_chunk: KVCache,
    level: EncodingLevel,
    model: SymbolModel,
    *,
    chunk_id: int = 0,
    token_offset: int = 0,
    group_size: int | None = None,
    base_bins: tuple[float, float, float] = DEFAULT_BASE_BINS,
    workers: int | None = None,
) -> EncodedChunk:
    size = settings.group_size if group_size is None else group_size
    n_workers = settings.codec_workers if workers is None else workers
    dims = kv_chunk.dims
    model.check_dims(dims.n_layers, dims.n_channels)
    if dims.n_tokens == 0:
        raise KVDimensionError("cannot encode an empty chunk")
    if not 1 <= size <= 0xFFFF:
        raise ValueError(f"group_size must lie in [1, 65535], got {size}")

    # bins are stored as float32; quantize against the stored values
    ladder_bins = QuantConfig.for_level(dims.n_layers, level, base_bins).per_layer_bin
    qc = QuantConfig(dims.n_layers, tuple(float(np.float32(b)) for b in ladder_bins))
    spans = split_groups(dims.n_tokens, size)

    def encode_one(span: range) -> tuple[bytes, int]:
        payload = encode_group(kv_chunk.tokens(span.start, span.stop), qc, span.start)
        return _encode_group_record(payload, model), payload.clipped

    records = _map_ordered(encode_one, spans, n_workers)
    clipped = sum(count for _, count in records)
    if clipped:
        logger.warning(
            "Chunk %s at %s: %s delta symbols clipped to 16 bits", chunk_id, level.label, clipped
        )

    header = ChunkHeader(
        chunk_id=chunk_id,
        level_id=level.id,
        token_offset=token_offset,
        dims=dims,
        group_size=size,
        model_hash=model.model_hash,
        bins=qc.per_layer_bin,
    )
    body = b"".join(
        [
            _HEADER.pack(
                CHUNK_MAGIC,
                CHUNK_VERSION,
                chunk_id,
                level.id,
                token_offset,
                dims.n_tokens,
                dims.n_layers,
                dims.n_channels,
                size,
                model.model_hash,
            ),
            np.asarray(qc.per_layer_bin, dtype="<f4").tobytes(),
            *(record for record, _ in records),
        ]
    )
    return EncodedChunk(header, body + _CRC.pack(zlib.crc32(body)))


# --- decoding ---


def parse_header(data: bytes) -> tuple[ChunkHeader, int]:
    """Validate the trailer and header; return the header and the offset of group 0."""
    if len(data) < _HEADER.size + _CRC.size:
        raise ChunkFormatError(f"chunk of {len(data)} bytes is too short")
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(data[: -_CRC.size]) != crc:
        raise ChunkFormatError("chunk checksum mismatch")

    fields = _HEADER.unpack_from(data, 0)
    magic, version, chunk_id, level_id, offset = fields[:5]
    n_tokens, n_layers, n_channels, size, model_hash = fields[5:]
    if magic != CHUNK_MAGIC:
        raise ChunkFormatError(f"bad chunk magic {magic!r}")
    if version != CHUNK_VERSION:
        raise ChunkFormatError(f"unsupported chunk version {version}")
    if size == 0 or n_tokens == 0:
        raise ChunkFormatError(f"invalid group size {size} or token count {n_tokens}")
    try:
        dims = KVDims(n_tokens, n_layers, n_channels)
    except KVDimensionError as exc:
        raise ChunkFormatError(str(exc)) from exc

    cursor = _HEADER.size
    end = cursor + 4 * n_layers
    if end > len(data) - _CRC.size:
        raise ChunkFormatError("chunk truncated inside the bin table")
    bins = np.frombuffer(data, dtype="<f4", count=n_layers, offset=cursor)
    if not np.all(np.isfinite(bins)) or np.any(bins <= 0):
        raise ChunkFormatError("chunk carries invalid quantization bins")
    header = ChunkHeader(
        chunk_id=chunk_id,
        level_id=level_id,
        token_offset=offset,
        dims=dims,
        group_size=size,
        model_hash=model_hash,
        bins=tuple(float(b) for b in bins),
    )
    return header, end


@dataclass
class _GroupRecord:
    span: range
    k_scales: np.ndarray
    v_scales: np.ndarray
    streams: list[bytes] = field(default_factory=list)


def _read_records(data: bytes, header: ChunkHeader, cursor: int) -> list[_GroupRecord]:
    n_layers = header.dims.n_layers
    limit = len(data) - _CRC.size
    records: list[_GroupRecord] = []

    def take(n: int) -> bytes:
        nonlocal cursor
        if cursor + n > limit:
            raise ChunkFormatError(f"chunk truncated at byte {cursor}")
        piece = data[cursor : cursor + n]
        cursor += n
        return piece

    for span in split_groups(header.dims.n_tokens, header.group_size):
        k_scales = np.frombuffer(take(4 * n_layers), dtype="<f4").astype(np.float32)
        v_scales = np.frombuffer(take(4 * n_layers), dtype="<f4").astype(np.float32)
        record = _GroupRecord(span, k_scales, v_scales)
        for _ in range(2):
            (length,) = _LENGTH.unpack(take(_LENGTH.size))
            record.streams.append(take(length))
        records.append(record)
    if cursor != limit:
        raise ChunkFormatError(f"{limit - cursor} unexpected bytes after the last group")
    return records


def _decode_record(record: _GroupRecord, model: SymbolModel, qc: QuantConfig) -> np.ndarray:
    n_layers, n_channels = model.n_layers, model.n_channels
    n_deltas = len(record.span) - 1
    selectors = _stream_selectors(model, n_deltas).tolist()
    parts = []
    for scales, stream in zip((record.k_scales, record.v_scales), record.streams, strict=True):
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise ChunkFormatError(f"group {record.span} carries invalid anchor scales")
        try:
            symbols = ac_decode(stream, selectors, model.tables)
        except StreamExhaustedError as exc:
            raise ChunkFormatError(f"group {record.span}: {exc}") from exc
        anchors, deltas = _split_stream(symbols, n_layers, n_channels, n_deltas)
        parts.append(TensorGroup(scales, anchors, deltas))
    payload = GroupPayload(record.span, parts[0], parts[1])
    decoded = decode_group(payload, qc)
    return np.stack([decoded.k, decoded.v])


def decode_chunk(data: bytes, model: SymbolModel, *, workers: int | None = None) -> DecodedChunk:
    n_workers = settings.codec_workers if workers is None else workers
    header, cursor = parse_header(data)
    if header.model_hash != model.model_hash:
        raise ModelMismatchError(
            f"chunk was encoded with model {header.model_hash:016x}, "
            f"decoder holds {model.model_hash:016x}"
        )
    model.check_dims(header.dims.n_layers, header.dims.n_channels)
    qc = header.quant_config()
    records = _read_records(data, header, cursor)
    groups = _map_ordered(lambda rec: _decode_record(rec, model, qc), records, n_workers)
    stacked = np.concatenate(groups, axis=1)
    kv = KVCache(header.dims, stacked[0].astype(ELEMENT_DTYPE), stacked[1].astype(ELEMENT_DTYPE))
    return DecodedChunk(header.chunk_id, header.level_id, header.token_range, kv)


# --- multi-chunk library ---


@dataclass(frozen=True)
class ChunkPlan:
    """What the streamer needs to know about one chunk: token count and size per level."""

    chunk_id: int
    token_range: range
    sizes: dict[int, int]

    @property
    def n_tokens(self) -> int:
        return len(self.token_range)


@dataclass
class ChunkLibrary:
    context_id: str
    model_hash: int
    group_size: int
    levels: tuple[int, ...]
    token_ranges: list[range]
    streams: dict[tuple[int, int], bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.levels:
            raise CoverageError("a library needs at least one level")
        for chunk_id in range(len(self.token_ranges)):
            for level_id in self.levels:
                if (chunk_id, level_id) not in self.streams:
                    raise CoverageError(f"chunk {chunk_id} is missing level L{level_id}")

    @property
    def n_chunks(self) -> int:
        return len(self.token_ranges)

    @property
    def n_tokens(self) -> int:
        return self.token_ranges[-1].stop if self.token_ranges else 0

    def chunk(self, chunk_id: int, level_id: int) -> bytes:
        try:
            return self.streams[(chunk_id, level_id)]
        except KeyError as exc:
            raise CoverageError(f"library has no chunk {chunk_id} at L{level_id}") from exc

    def size(self, chunk_id: int, level_id: int) -> int:
        return len(self.chunk(chunk_id, level_id))

    def total_bytes(self, level_id: int) -> int:
        return sum(self.size(chunk_id, level_id) for chunk_id in range(self.n_chunks))

    def storage_overhead(self, reference_level: int = 1) -> float:
        """Bytes across every stored level relative to storing one level."""
        return sum(self.total_bytes(level) for level in self.levels) / self.total_bytes(
            reference_level
        )

    def stream_plan(self) -> list[ChunkPlan]:
        return [
            ChunkPlan(
                chunk_id=chunk_id,
                token_range=token_range,
                sizes={level: self.size(chunk_id, level) for level in self.levels},
            )
            for chunk_id, token_range in enumerate(self.token_ranges)
        ]


def chunk_ranges(n_tokens: int, chunk_tokens: int, group_size: int) -> list[range]:
    """Chunk boundaries snapped down to a multiple of ``group_size``."""
    if chunk_tokens < group_size:
        raise CoverageError(f"chunk_tokens {chunk_tokens} is smaller than group_size {group_size}")
    step = (chunk_tokens // group_size) * group_size
    return [range(start, min(start + step, n_tokens)) for start in range(0, n_tokens, step)]


def build_library(
    kv: KVCache,
    model: SymbolModel,
    *,
    chunk_tokens: int | None = None,
    levels: Sequence[EncodingLevel] | None = None,
    context_id: str = "context",
    group_size: int | None = None,
    base_bins: tuple[float, float, float] = DEFAULT_BASE_BINS,
    workers: int | None = None,
) -> ChunkLibrary:
    size = settings.group_size if group_size is None else group_size
    tokens = settings.chunk_tokens if chunk_tokens is None else chunk_tokens
    n_workers = settings.codec_workers if workers is None else workers
    ladder = list(levels) if levels is not None else default_levels()
    if not ladder:
        raise CoverageError("build_library needs at least one encoding level")
    if kv.dims.n_tokens == 0:
        raise KVDimensionError("cannot build a library from an empty cache")
    model.check_dims(kv.dims.n_layers, kv.dims.n_channels)

    ranges = chunk_ranges(kv.dims.n_tokens, tokens, size)
    jobs = [(chunk_id, span, level) for chunk_id, span in enumerate(ranges) for level in ladder]

    def encode_job(job: tuple[int, range, EncodingLevel]) -> EncodedChunk:
        chunk_id, span, level = job
        return encode_chunk(
            kv.tokens(span.start, span.stop),
            level,
            model,
            chunk_id=chunk_id,
            token_offset=span.start,
            group_size=size,
            base_bins=base_bins,
            workers=1,
        )

    encoded = _map_ordered(encode_job, jobs, n_workers)
    library = ChunkLibrary(
        context_id=context_id,
        model_hash=model.model_hash,
        group_size=size,
        levels=tuple(level.id for level in ladder),
        token_ranges=ranges,
        streams={(chunk.chunk_id, chunk.level_id): chunk.data for chunk in encoded},
    )
    logger.info(
        "Built library '%s': %s chunks x %s levels, %s bytes at L%s",
        context_id,
        library.n_chunks,
        len(ladder),
        library.total_bytes(ladder[0].id),
        ladder[0].id,
    )
    return library


def reassemble(chunks: Iterable[DecodedChunk]) -> KVCache:
    """Concatenate decoded chunks along the token axis; levels may differ per chunk."""
    ordered = sorted(chunks, key=lambda chunk: chunk.token_range.start)
    if not ordered:
        raise CoverageError("nothing to reassemble")
    cursor = 0
    for chunk in ordered:
        if chunk.token_range.start != cursor:
            kind = "gap" if chunk.token_range.start > cursor else "overlap"
            raise CoverageError(f"{kind} at token {cursor} (chunk {chunk.chunk_id})")
        cursor = chunk.token_range.stop
    first = ordered[0].kv.dims
    for chunk in ordered[1:]:
        if (chunk.kv.dims.n_layers, chunk.kv.dims.n_channels) != (first.n_layers, first.n_channels):
            raise CoverageError(f"chunk {chunk.chunk_id} has different layer/channel dims")
    k = np.concatenate([chunk.kv.k for chunk in ordered], axis=0)
    v = np.concatenate([chunk.kv.v for chunk in ordered], axis=0)
    return KVCache(first.with_tokens(cursor), k, v)


# --- analysis helpers ---


@dataclass(frozen=True)
class ReconstructionStats:
    max_abs_error: float
    mse: float
    per_layer_mse: tuple[float, ...]


def reconstruction_stats(original: KVCache, decoded: KVCache) -> ReconstructionStats:
    if original.dims != decoded.dims:
        raise KVDimensionError(
            f"cannot compare caches with dims {original.dims.shape} and {decoded.dims.shape}"
        )
    if original.dims.n_tokens == 0:
        return ReconstructionStats(0.0, 0.0, tuple(0.0 for _ in range(original.dims.n_layers)))
    diff = np.stack(
        [
            decoded.k.astype(np.float64) - original.k.astype(np.float64),
            decoded.v.astype(np.float64) - original.v.astype(np.float64),
        ]
    )
    squared = diff**2
    return ReconstructionStats(
        max_abs_error=float(np.abs(diff).max()),
        mse=float(squared.mean()),
        per_layer_mse=tuple(float(x) for x in squared.mean(axis=(0, 1, 3))),
    )


def collect_symbols(
    kv: KVCache,
    level: EncodingLevel,
    *,
    group_size: int | None = None,
    base_bins: tuple[float, float, float] = DEFAULT_BASE_BINS,
) -> list[SymbolTensor]:
    """Quantized anchor and delta symbols of a cache, labelled for model profiling."""
    size = settings.group_size if group_size is None else group_size
    qc = QuantConfig.for_level(kv.dims.n_layers, level, base_bins)
    anchors: list[np.ndarray] = []
    deltas: list[np.ndarray] = []
    for span in split_groups(kv.dims.n_tokens, size):
        payload = encode_group(kv.tokens(span.start, span.stop), qc, span.start)
        for part in (payload.k, payload.v):
            anchors.append(part.anchor_symbols[None, :, :])
            deltas.append(part.delta_symbols)
    if not anchors:
        return []
    return [
        SymbolTensor(SymbolKind.ANCHOR, np.concatenate(anchors, axis=0)),
        SymbolTensor(SymbolKind.DELTA, np.concatenate(deltas, axis=0)),
    ]
