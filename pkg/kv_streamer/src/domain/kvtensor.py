from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import KVDimensionError

ELEMENT_DTYPE = np.float32


@dataclass(frozen=True)
class KVDims:
    """Token, layer and channel counts of a KV cache."""

    n_tokens: int
    n_layers: int
    n_channels: int

    def __post_init__(self) -> None:
        if self.n_tokens < 0:
            raise KVDimensionError(f"n_tokens must be >= 0, got {self.n_tokens}")
        if self.n_layers <= 0 or self.n_channels <= 0:
            raise KVDimensionError(
                "n_layers and n_channels must be positive, "
                f"got ({self.n_layers}, {self.n_channels})"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_tokens, self.n_layers, self.n_channels)

    @property
    def n_elements(self) -> int:
        return self.n_tokens * self.n_layers * self.n_channels

    def with_tokens(self, n_tokens: int) -> KVDims:
        return KVDims(n_tokens, self.n_layers, self.n_channels)


@dataclass(frozen=True)
class KVCache:
    """Pair of K and V tensors shaped [tokens, layers, channels].

    Arrays are made read-only on construction so a cache can be shared between
    threads without copying.
    """

    dims: KVDims
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        for name in ("k", "v"):
            tensor = getattr(self, name)
            if tensor.shape != self.dims.shape:
                raise KVDimensionError(
                    f"{name.upper()} tensor shape {tensor.shape} does not match dims "
                    f"{self.dims.shape}"
                )
            if tensor.dtype != ELEMENT_DTYPE:
                tensor = tensor.astype(ELEMENT_DTYPE)
                object.__setattr__(self, name, tensor)
            if not np.all(np.isfinite(tensor)):
                raise KVDimensionError(f"{name.upper()} tensor contains NaN or Inf values")
            tensor.flags.writeable = False

    @classmethod
    def from_arrays(cls, k: np.ndarray, v: np.ndarray) -> KVCache:
        if k.ndim != 3:
            raise KVDimensionError(f"expected a 3-D tensor, got shape {k.shape}")
        return cls(KVDims(*k.shape), np.ascontiguousarray(k), np.ascontiguousarray(v))

    def tokens(self, start: int, stop: int) -> KVCache:
        """Slice [start, stop) along the token axis."""
        return KVCache(
            self.dims.with_tokens(stop - start),
            self.k[start:stop],
            self.v[start:stop],
        )

    def tensors(self) -> tuple[np.ndarray, np.ndarray]:
        return self.k, self.v

    def equals(self, other: KVCache) -> bool:
        return (
            self.dims == other.dims
            and np.array_equal(self.k, other.k)
            and np.array_equal(self.v, other.v)
        )


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the AR(1) synthetic generator."""

    dims: KVDims
    rho: float = 0.98
    sigma: float = 1.0
    channel_offset_scale: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < 1.0:
            raise KVDimensionError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma <= 0:
            raise KVDimensionError(f"sigma must be positive, got {self.sigma}")
        if self.channel_offset_scale < 0:
            raise KVDimensionError(
                f"channel_offset_scale must be nonnegative, got {self.channel_offset_scale}"
            )


def _checked_element_count(dims: KVDims) -> int:
    count = dims.n_elements
    if count * np.dtype(ELEMENT_DTYPE).itemsize > sys.maxsize:
        raise KVDimensionError(f"dims {dims.shape} exceed the addressable size")
    return count


def new_zeros(dims: KVDims) -> KVCache:
    _checked_element_count(dims)
    return KVCache(
        dims,
        np.zeros(dims.shape, dtype=ELEMENT_DTYPE),
        np.zeros(dims.shape, dtype=ELEMENT_DTYPE),
    )


def synth_ar1(spec: SynthSpec) -> KVCache:
    """Generate a cache whose values follow a stationary AR(1) process along tokens.

    Each (layer, channel) series has mean ``channel_offset_scale * g`` with ``g``
    drawn once per series, variance ``sigma**2`` and lag-d autocorrelation
    ``rho**d``. K is drawn before V from a single seeded generator.
    """
    dims = spec.dims
    _checked_element_count(dims)
    rng = np.random.default_rng(spec.seed)
    innovation_scale = math.sqrt(1.0 - spec.rho * spec.rho) * spec.sigma

    tensors: list[np.ndarray] = []
    for _ in range(2):
        mu = spec.channel_offset_scale * rng.standard_normal((dims.n_layers, dims.n_channels))
        out = np.empty(dims.shape, dtype=np.float64)
        if dims.n_tokens:
            eps = rng.standard_normal(dims.shape)
            drift = (1.0 - spec.rho) * mu
            out[0] = mu + spec.sigma * eps[0]
            for t in range(1, dims.n_tokens):
                out[t] = spec.rho * out[t - 1] + innovation_scale * eps[t] + drift
        tensors.append(out.astype(ELEMENT_DTYPE))

    return KVCache(dims, tensors[0], tensors[1])


def kv_size_bytes(dims: KVDims, bytes_per_element: int) -> int:
    """Size of ONE tensor (K or V); double it for the whole cache."""
    if bytes_per_element not in (1, 2, 4):
        raise KVDimensionError(f"bytes_per_element must be 1, 2 or 4, got {bytes_per_element}")
    size = dims.n_elements * bytes_per_element
    if size > sys.maxsize:
        raise KVDimensionError(f"size of dims {dims.shape} overflows")
    return size
