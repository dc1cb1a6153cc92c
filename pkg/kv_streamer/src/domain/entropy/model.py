from __future__ import annotations

import hashlib
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Literal

import numpy as np

from ...config.env import settings
from ..errors import ModelMismatchError
from ..quant import ANCHOR_MAX
from .coder import LITERAL_BITS, FrequencyTable

FREQUENCY_CAP = 0xFFFF
ANCHOR_SLOTS = 2 * ANCHOR_MAX + 1


class SymbolKind(IntEnum):
    ANCHOR = 0
    DELTA = 1


@dataclass(frozen=True)
class SymbolTensor:
    """Quantized symbols shaped [tokens, layers, channels] with their kind label."""

    kind: SymbolKind
    symbols: np.ndarray

    def __post_init__(self) -> None:
        if self.symbols.ndim != 3:
            raise ModelMismatchError(
                f"symbol tensors must be [tokens, layers, channels], got {self.symbols.shape}"
            )


def delta_slots(half_width: int) -> int:
    return 2 * half_width + 2


def _smoothed(counts: np.ndarray) -> np.ndarray:
    """Add-one smoothing, then rescale rows whose peak would overflow uint16."""
    freqs = counts.astype(np.int64) + 1
    peak = freqs.max(axis=-1, keepdims=True)
    scaled = np.maximum(1, (freqs * FREQUENCY_CAP) // np.maximum(peak, 1))
    return np.where(peak > FREQUENCY_CAP, scaled, freqs).astype(np.uint16)


def _hash_tables(
    n_layers: int, n_channels: int, half_width: int, anchor: np.ndarray, delta: np.ndarray
) -> int:
    digest = hashlib.blake2b(digest_size=8)
    digest.update(struct.pack("<IIH", n_layers, n_channels, half_width))
    digest.update(anchor.astype("<u2").tobytes())
    digest.update(delta.astype("<u2").tobytes())
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class SymbolModel:
    """Per-(kind, layer, channel) frequency tables shared by encoder and decoder.

    Anchor tables span [-127, 127]; delta tables span [-S, S] followed by one
    ESCAPE slot. Selector ``kind * L * C + layer * C + channel`` indexes
    ``tables``.
    """

    n_layers: int
    n_channels: int
    half_width: int
    anchor_freqs: np.ndarray  # uint16 [layers, channels, 255]
    delta_freqs: np.ndarray  # uint16 [layers, channels, 2S + 2]
    model_hash: int = field(default=0)

    def __post_init__(self) -> None:
        expected_anchor = (self.n_layers, self.n_channels, ANCHOR_SLOTS)
        expected_delta = (self.n_layers, self.n_channels, delta_slots(self.half_width))
        if self.anchor_freqs.shape != expected_anchor:
            raise ModelMismatchError(
                f"anchor tables shaped {self.anchor_freqs.shape}, expected {expected_anchor}"
            )
        if self.delta_freqs.shape != expected_delta:
            raise ModelMismatchError(
                f"delta tables shaped {self.delta_freqs.shape}, expected {expected_delta}"
            )
        if self.anchor_freqs.min(initial=1) < 1 or self.delta_freqs.min(initial=1) < 1:
            raise ModelMismatchError("every frequency must be >= 1")
        computed = _hash_tables(
            self.n_layers, self.n_channels, self.half_width, self.anchor_freqs, self.delta_freqs
        )
        if self.model_hash == 0:
            object.__setattr__(self, "model_hash", computed)
        elif self.model_hash != computed:
            raise ModelMismatchError(
                f"model hash {self.model_hash:016x} does not match tables ({computed:016x})"
            )
        self.anchor_freqs.flags.writeable = False
        self.delta_freqs.flags.writeable = False

    @property
    def n_contexts(self) -> int:
        return self.n_layers * self.n_channels

    def selector(self, kind: SymbolKind, layer: int, channel: int) -> int:
        return int(kind) * self.n_contexts + layer * self.n_channels + channel

    def selector_grid(self, kind: SymbolKind) -> np.ndarray:
        """Selectors shaped [layers, channels] for one kind."""
        base = int(kind) * self.n_contexts
        return base + np.arange(self.n_contexts, dtype=np.int64).reshape(
            self.n_layers, self.n_channels
        )

    @cached_property
    def tables(self) -> tuple[FrequencyTable, ...]:
        anchors = [
            FrequencyTable.from_frequencies(row.tolist(), offset=ANCHOR_MAX)
            for row in self.anchor_freqs.reshape(self.n_contexts, -1)
        ]
        escape = delta_slots(self.half_width) - 1
        deltas = [
            FrequencyTable.from_frequencies(row.tolist(), offset=self.half_width, escape=escape)
            for row in self.delta_freqs.reshape(self.n_contexts, -1)
        ]
        return tuple(anchors + deltas)

    def check_dims(self, n_layers: int, n_channels: int) -> None:
        if (n_layers, n_channels) != (self.n_layers, self.n_channels):
            raise ModelMismatchError(
                f"model covers ({self.n_layers} layers, {self.n_channels} channels), "
                f"data has ({n_layers}, {n_channels})"
            )


def _slot_indices(symbols: np.ndarray, half_width: int) -> np.ndarray:
    """Delta slot per symbol; out-of-alphabet symbols map to the ESCAPE slot."""
    sym = symbols.astype(np.int64)
    in_range = np.abs(sym) <= half_width
    return np.where(in_range, sym + half_width, 2 * half_width + 1)


def profile_model(corpus: Iterable[SymbolTensor], half_width: int | None = None) -> SymbolModel:
    """Profile add-one-smoothed histograms for every (kind, layer, channel)."""
    S = settings.alphabet_half_width if half_width is None else half_width
    entries = list(corpus)
    if not entries:
        raise ModelMismatchError("cannot profile a model from an empty corpus")
    _, n_layers, n_channels = entries[0].symbols.shape
    n_contexts = n_layers * n_channels
    context_ids = np.arange(n_contexts, dtype=np.int64).reshape(1, n_layers, n_channels)

    anchor_counts = np.zeros(n_contexts * ANCHOR_SLOTS, dtype=np.int64)
    delta_counts = np.zeros(n_contexts * delta_slots(S), dtype=np.int64)
    for entry in entries:
        if entry.symbols.shape[1:] != (n_layers, n_channels):
            raise ModelMismatchError(
                f"corpus tensor {entry.symbols.shape} does not match "
                f"({n_layers} layers, {n_channels} channels)"
            )
        if entry.symbols.shape[0] == 0:
            continue
        if entry.kind is SymbolKind.ANCHOR:
            slots = np.clip(entry.symbols.astype(np.int64), -ANCHOR_MAX, ANCHOR_MAX) + ANCHOR_MAX
            flat = context_ids * ANCHOR_SLOTS + slots
            anchor_counts += np.bincount(flat.ravel(), minlength=anchor_counts.size)
        else:
            flat = context_ids * delta_slots(S) + _slot_indices(entry.symbols, S)
            delta_counts += np.bincount(flat.ravel(), minlength=delta_counts.size)

    return SymbolModel(
        n_layers=n_layers,
        n_channels=n_channels,
        half_width=S,
        anchor_freqs=_smoothed(anchor_counts.reshape(n_layers, n_channels, ANCHOR_SLOTS)),
        delta_freqs=_smoothed(delta_counts.reshape(n_layers, n_channels, delta_slots(S))),
    )


def global_table(corpus: Iterable[SymbolTensor], half_width: int | None = None) -> FrequencyTable:
    """One pooled delta-style table over every kind, layer and channel."""
    S = settings.alphabet_half_width if half_width is None else half_width
    counts = np.zeros(delta_slots(S), dtype=np.int64)
    for entry in corpus:
        counts += np.bincount(
            _slot_indices(entry.symbols, S).ravel(), minlength=delta_slots(S)
        )
    freqs = _smoothed(counts[None, :])[0]
    return FrequencyTable.from_frequencies(freqs.tolist(), offset=S, escape=delta_slots(S) - 1)


def _log2_probabilities(tables: Sequence[FrequencyTable]) -> list[np.ndarray]:
    out = []
    for table in tables:
        cum = np.asarray(table.cumulative, dtype=np.float64)
        out.append(np.log2(np.diff(cum)) - np.log2(cum[-1]))
    return out


def table_cross_entropy_bits(
    symbols: Sequence[int] | np.ndarray,
    selectors: Sequence[int] | np.ndarray,
    tables: Sequence[FrequencyTable],
) -> float:
    """Ideal code length in bits, including 16 bits per escape literal."""
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    sel = np.asarray(selectors, dtype=np.int64).ravel()
    if sym.shape != sel.shape:
        raise ModelMismatchError(f"{sym.size} symbols but {sel.size} selectors")
    if sym.size == 0:
        return 0.0
    log_probs = _log2_probabilities(tables)
    total = 0.0
    for table_id in np.unique(sel):
        table = tables[int(table_id)]
        picked = sym[sel == table_id]
        idx = picked + table.offset
        direct = (idx >= 0) & (idx < table.coded_slots)
        if not np.all(direct) and table.escape is None:
            raise ModelMismatchError("symbol outside a table without escape")
        slots = np.where(direct, idx, table.escape if table.escape is not None else 0)
        total -= float(log_probs[int(table_id)][slots].sum())
        total += LITERAL_BITS * float(np.count_nonzero(~direct))
    return total


def cross_entropy_bits(
    model: SymbolModel,
    symbols: Sequence[int] | np.ndarray,
    selectors: Sequence[int] | np.ndarray,
) -> float:
    return table_cross_entropy_bits(symbols, selectors, model.tables)


GroupBy = Literal["none", "token", "layer", "channel", "layer_channel"]


def grouped_entropy_bits(symbols: np.ndarray, by: GroupBy) -> float:
    """Mean bits per element when each group gets its own add-one-smoothed table.

    ``symbols`` is shaped [tokens, layers, channels]. Smoothing spans the
    symbol range observed in the whole tensor, so small groups pay for the
    statistics they lack.
    """
    if symbols.ndim != 3:
        raise ModelMismatchError(f"expected [tokens, layers, channels], got {symbols.shape}")
    if symbols.size == 0:
        return 0.0
    n_tokens, n_layers, n_channels = symbols.shape
    token_idx, layer_idx, channel_idx = np.indices(symbols.shape)
    labels = {
        "none": np.zeros(symbols.shape, dtype=np.int64),
        "token": token_idx,
        "layer": layer_idx,
        "channel": channel_idx,
        "layer_channel": layer_idx * n_channels + channel_idx,
    }[by].ravel()
    values = symbols.astype(np.int64).ravel()
    low = int(values.min())
    n_values = int(values.max()) - low + 1
    n_groups = int(labels.max()) + 1
    counts = np.bincount(labels * n_values + (values - low), minlength=n_groups * n_values)
    counts = counts.reshape(n_groups, n_values).astype(np.float64) + 1.0
    probs = counts / counts.sum(axis=1, keepdims=True)
    bits = -np.log2(probs[labels, values - low])
    return float(bits.mean())
