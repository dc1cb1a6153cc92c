from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .errors import TraceFormatError


@dataclass(frozen=True)
class BandwidthTrace:
    """Piecewise-constant throughput; the last rate holds forever.

    ``segments`` is an ordered tuple of ``(start_s, bits_per_second)`` pairs
    starting at 0.
    """

    segments: tuple[tuple[float, float], ...]
    label: str = ""

    def __post_init__(self) -> None:
        if not self.segments:
            raise TraceFormatError("a trace needs at least one segment")
        if self.segments[0][0] != 0.0:
            raise TraceFormatError(f"first segment must start at 0, got {self.segments[0][0]}")
        previous = -1.0
        for start, rate in self.segments:
            if not np.isfinite(start) or not np.isfinite(rate):
                raise TraceFormatError(f"non-finite segment ({start}, {rate})")
            if start <= previous:
                raise TraceFormatError(f"segment starts must increase strictly, got {start}")
            if rate <= 0:
                raise TraceFormatError(f"bandwidth must be positive, got {rate} at t={start}")
            previous = start

    @classmethod
    def constant(cls, bits_per_second: float, label: str = "") -> BandwidthTrace:
        return cls(((0.0, float(bits_per_second)),), label=label)

    @classmethod
    def from_mapping(cls, rates: dict[float, float], label: str = "") -> BandwidthTrace:
        return cls(tuple((float(t), float(r)) for t, r in sorted(rates.items())), label=label)

    @property
    def starts(self) -> list[float]:
        return [start for start, _ in self.segments]

    def rate_at(self, t: float) -> float:
        idx = max(bisect.bisect_right(self.starts, t) - 1, 0)
        return self.segments[idx][1]


def transfer_time(bits: float, start_time: float, trace: BandwidthTrace) -> float:
    """Time needed to push ``bits`` starting at ``start_time``, integrated exactly."""
    if bits < 0:
        raise ValueError(f"bits must be >= 0, got {bits}")
    if bits == 0:
        return 0.0
    starts = trace.starts
    idx = max(bisect.bisect_right(starts, start_time) - 1, 0)
    now = start_time
    remaining = float(bits)
    while True:
        rate = trace.segments[idx][1]
        if idx + 1 >= len(starts):
            return now + remaining / rate - start_time
        capacity = (starts[idx + 1] - now) * rate
        if capacity >= remaining:
            return now + remaining / rate - start_time
        remaining -= capacity
        now = starts[idx + 1]
        idx += 1


@dataclass(frozen=True)
class RandomTraceSpec:
    min_bps: float
    max_bps: float
    segment_s: float = 1.0
    n_segments: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.min_bps <= self.max_bps:
            raise TraceFormatError(
                f"need 0 < min_bps <= max_bps, got ({self.min_bps}, {self.max_bps})"
            )
        if self.segment_s <= 0 or self.n_segments < 1:
            raise TraceFormatError("segment_s must be positive and n_segments >= 1")


def random_trace(spec: RandomTraceSpec) -> BandwidthTrace:
    rng = np.random.default_rng(spec.seed)
    rates = rng.uniform(spec.min_bps, spec.max_bps, size=spec.n_segments)
    segments = tuple((i * spec.segment_s, float(rate)) for i, rate in enumerate(rates))
    return BandwidthTrace(segments, label=f"random-{spec.seed}")
