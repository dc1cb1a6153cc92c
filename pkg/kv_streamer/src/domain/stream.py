"""SLO-driven streaming of a chunk library over a bandwidth trace.

Each chunk goes through two stages: network transfer, then GPU work (KV
decode, or recomputation from text). With ``pipelined=True`` the transfer of
chunk i overlaps the GPU work of chunk i-1. The policy picks every chunk's
configuration from the throughput measured on the previous chunk.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field

from .codec import ChunkLibrary, ChunkPlan
from .netsim import BandwidthTrace, transfer_time
from .quant import DEFAULT_LEVEL_ID

logger = logging.getLogger(__name__)

TEXT_BYTES_PER_TOKEN = 4
TEXT_LABEL = "text"
# finish times are sums of float durations; tolerate their rounding
SLO_TOLERANCE_S = 1e-9


@dataclass(frozen=True)
class StreamingConfig:
    """Text recomputation (``level_id is None``) or one KV encoding level."""

    level_id: int | None = None

    @classmethod
    def text(cls) -> StreamingConfig:
        return cls(None)

    @classmethod
    def kv(cls, level_id: int) -> StreamingConfig:
        return cls(level_id)

    @classmethod
    def parse(cls, label: str) -> StreamingConfig:
        if label == TEXT_LABEL:
            return cls.text()
        if len(label) > 1 and label[0] == "L" and label[1:].isdigit():
            return cls.kv(int(label[1:]))
        raise ValueError(f"unknown streaming config '{label}'")

    @property
    def is_text(self) -> bool:
        return self.level_id is None

    @property
    def label(self) -> str:
        return TEXT_LABEL if self.level_id is None else f"L{self.level_id}"

    @property
    def quality_rank(self) -> int:
        """Lower is better: text ranks above every level."""
        return -1 if self.level_id is None else self.level_id

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class DelayModel:
    """Compute and network delay coefficients.

    ``a`` s/token^2, ``b`` s/(token * resident token), ``c`` s/token, ``d``
    s/byte of KV decode, ``rtt`` seconds. ``slowdown`` scales every compute
    term to model GPU contention.
    """

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    rtt: float = 0.0
    slowdown: float = 1.0

    def __post_init__(self) -> None:
        for name in ("a", "b", "c", "d", "rtt"):
            if getattr(self, name) < 0:
                raise ValueError(f"delay coefficient {name} must be >= 0")
        if self.slowdown <= 0:
            raise ValueError(f"slowdown must be positive, got {self.slowdown}")

    def decode_time(self, n_bytes: float) -> float:
        return self.slowdown * self.d * n_bytes


def _prefill(dm: DelayModel, new_tokens: float, resident_tokens: float) -> float:
    return dm.slowdown * (
        dm.a * new_tokens * new_tokens + dm.b * new_tokens * resident_tokens + dm.c * new_tokens
    )


def text_recompute_time(dm: DelayModel, tokens_remaining: int, tokens_resident: int) -> float:
    if tokens_remaining < 0 or tokens_resident < 0:
        raise ValueError("token counts must be >= 0")
    return _prefill(dm, tokens_remaining, tokens_resident)


def estimate_ttft(
    size_bytes: float,
    bandwidth_bps: float,
    dm: DelayModel,
    tokens_context: int,
    tokens_prompt: int,
) -> float:
    """Transfer + decode of ``size_bytes`` plus the prompt's prefill on top of the context."""
    if bandwidth_bps <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_bps}")
    return (
        8.0 * size_bytes / bandwidth_bps
        + dm.rtt
        + dm.decode_time(size_bytes)
        + _prefill(dm, tokens_prompt, tokens_context)
    )


def _default_config(levels: Sequence[int]) -> StreamingConfig:
    if DEFAULT_LEVEL_ID in levels:
        return StreamingConfig.kv(DEFAULT_LEVEL_ID)
    ordered = sorted(levels)
    return StreamingConfig.kv(ordered[len(ordered) // 2])


def project_finish(
    remaining: Sequence[ChunkPlan],
    config: StreamingConfig,
    throughput_bps: float,
    dm: DelayModel,
    *,
    start: float,
    gpu_free: float,
    tokens_received: int,
    pipelined: bool = True,
    decode_workers: int = 1,
    prompt_tokens: int = 0,
) -> float:
    """Finish time if every remaining chunk used ``config`` at a steady ``throughput_bps``.

    Runs the same two-stage schedule as ``stream_context``, starting from the
    network being free at ``start`` and the GPU at ``gpu_free``.
    """
    network_free = start
    resident = tokens_received
    for plan in remaining:
        if config.is_text:
            n_bytes = TEXT_BYTES_PER_TOKEN * plan.n_tokens
            work = text_recompute_time(dm, plan.n_tokens, resident)
        else:
            n_bytes = plan.sizes[config.level_id]
            work = dm.decode_time(n_bytes) / decode_workers
        begin = network_free if pipelined else max(network_free, gpu_free)
        network_free = begin + 8.0 * n_bytes / throughput_bps
        gpu_free = max(network_free, gpu_free) + work
        resident += plan.n_tokens
    return gpu_free + _prefill(dm, prompt_tokens, resident)


def adapt_next_config(
    remaining: Sequence[ChunkPlan],
    slo: float,
    elapsed: float,
    throughput_bps: float | None,
    dm: DelayModel,
    tokens_received: int,
    *,
    allow_text: bool = True,
    gpu_free: float | None = None,
    pipelined: bool = True,
    decode_workers: int = 1,
    prompt_tokens: int = 0,
) -> StreamingConfig:
    """Pick the least lossy configuration that still lands the rest of the context by the SLO.

    ``elapsed`` is when the next transfer starts and ``gpu_free`` when the GPU
    finishes the work already queued (defaults to ``elapsed``). Without a
    throughput measurement the default medium level is used. Text is preferred
    whenever recomputing every remaining chunk fits; otherwise the
    highest-quality level whose remaining transfer and decode fits; otherwise
    the smallest level.
    """
    if not remaining:
        raise ValueError("adapt_next_config needs at least one remaining chunk")
    if decode_workers < 1:
        raise ValueError(f"decode_workers must be >= 1, got {decode_workers}")
    levels = sorted(remaining[0].sizes)
    if throughput_bps is None or throughput_bps <= 0:
        return _default_config(levels)

    def fits(config: StreamingConfig) -> bool:
        finish = project_finish(
            remaining,
            config,
            throughput_bps,
            dm,
            start=elapsed,
            gpu_free=elapsed if gpu_free is None else gpu_free,
            tokens_received=tokens_received,
            pipelined=pipelined,
            decode_workers=decode_workers,
            prompt_tokens=prompt_tokens,
        )
        return finish <= slo + SLO_TOLERANCE_S

    if allow_text and fits(StreamingConfig.text()):
        return StreamingConfig.text()
    for level in levels:
        if fits(StreamingConfig.kv(level)):
            return StreamingConfig.kv(level)

    totals = {level: sum(plan.sizes[level] for plan in remaining) for level in levels}
    fallback = min(levels, key=lambda level: (totals[level], -level))
    logger.warning(
        "No configuration fits %.3fs of remaining budget; best effort with L%s",
        slo - elapsed,
        fallback,
    )
    return StreamingConfig.kv(fallback)


# --- policies ---


@dataclass(frozen=True)
class PolicyContext:
    chunk_index: int
    remaining: Sequence[ChunkPlan]
    slo: float
    elapsed: float
    throughput_bps: float | None
    dm: DelayModel
    tokens_received: int
    gpu_free: float = 0.0
    pipelined: bool = True
    decode_workers: int = 1
    prompt_tokens: int = 0


class StreamPolicy(ABC):
    """Chooses a configuration for each chunk as the stream progresses."""

    policy_id: str = ""

    @abstractmethod
    def choose(self, context: PolicyContext) -> StreamingConfig:
        """Return the configuration for ``context.remaining[0]``."""

    def reset(self) -> None:
        """Hook called before a new session starts."""
        return None


class AdaptivePolicy(StreamPolicy):
    policy_id = "adaptive"

    def __init__(self, prior_bps: float | None = None, *, allow_text: bool = True) -> None:
        self.prior_bps = prior_bps
        self.allow_text = allow_text

    def choose(self, context: PolicyContext) -> StreamingConfig:
        throughput = context.throughput_bps
        if throughput is None:
            throughput = self.prior_bps
        return adapt_next_config(
            context.remaining,
            context.slo,
            context.elapsed,
            throughput,
            context.dm,
            context.tokens_received,
            allow_text=self.allow_text,
            gpu_free=context.gpu_free,
            pipelined=context.pipelined,
            decode_workers=context.decode_workers,
            prompt_tokens=context.prompt_tokens,
        )


class FixedPolicy(StreamPolicy):
    policy_id = "fixed"

    def __init__(self, config: StreamingConfig | None = None) -> None:
        self.config = config or StreamingConfig.kv(DEFAULT_LEVEL_ID)

    def choose(self, context: PolicyContext) -> StreamingConfig:
        return self.config


class ScriptedPolicy(StreamPolicy):
    """Replays an explicit per-chunk sequence of configurations."""

    policy_id = "scripted"

    def __init__(self, configs: Sequence[StreamingConfig]) -> None:
        self.configs = list(configs)

    def choose(self, context: PolicyContext) -> StreamingConfig:
        if context.chunk_index >= len(self.configs):
            raise ValueError(f"script has no configuration for chunk {context.chunk_index}")
        return self.configs[context.chunk_index]


# --- session ---


@dataclass(frozen=True)
class ChunkRecord:
    """One streamed chunk: transfer window, bytes on the wire and when its KV is ready."""

    chunk_id: int
    config: StreamingConfig
    n_tokens: int
    start_s: float
    end_s: float
    bytes: int
    throughput_bps: float
    cumulative_s: float


@dataclass
class StreamSession:
    slo: float
    policy_id: str
    trace_label: str
    records: list[ChunkRecord] = field(default_factory=list)
    finish_s: float = 0.0

    @property
    def violated(self) -> bool:
        return self.finish_s > self.slo + SLO_TOLERANCE_S

    @property
    def n_tokens(self) -> int:
        return sum(record.n_tokens for record in self.records)

    def quality(self, levels: Sequence[int] = (0, 1, 2, 3)) -> dict[str, float]:
        """Fraction of delivered tokens per configuration label."""
        counts = {TEXT_LABEL: 0, **{f"L{level}": 0 for level in levels}}
        for record in self.records:
            label = record.config.label
            counts[label] = counts.get(label, 0) + record.n_tokens
        total = self.n_tokens
        return {label: (count / total if total else 0.0) for label, count in counts.items()}

    def configs(self) -> list[StreamingConfig]:
        return [record.config for record in self.records]


def stream_context(
    library: ChunkLibrary | Sequence[ChunkPlan],
    trace: BandwidthTrace,
    slo: float,
    dm: DelayModel,
    *,
    policy: StreamPolicy | None = None,
    decode_workers: int = 1,
    pipelined: bool = True,
    prompt_tokens: int = 0,
    size_scale: float = 1.0,
) -> StreamSession:
    plan = library.stream_plan() if isinstance(library, ChunkLibrary) else list(library)
    if not plan:
        raise ValueError("cannot stream an empty library")
    if decode_workers < 1:
        raise ValueError(f"decode_workers must be >= 1, got {decode_workers}")
    if size_scale <= 0:
        raise ValueError(f"size_scale must be positive, got {size_scale}")
    active = policy or AdaptivePolicy()
    active.reset()

    session = StreamSession(slo=slo, policy_id=active.policy_id, trace_label=trace.label)
    network_free = dm.rtt
    gpu_free = 0.0
    throughput: float | None = None
    tokens_received = 0

    for index, chunk in enumerate(plan):
        start = network_free if pipelined else max(network_free, gpu_free)
        config = active.choose(
            PolicyContext(
                chunk_index=index,
                remaining=plan[index:],
                slo=slo,
                elapsed=start,
                throughput_bps=throughput,
                dm=dm,
                tokens_received=tokens_received,
                gpu_free=gpu_free,
                pipelined=pipelined,
                decode_workers=decode_workers,
                prompt_tokens=prompt_tokens,
            )
        )
        if config.is_text:
            n_bytes = TEXT_BYTES_PER_TOKEN * chunk.n_tokens
            gpu_work = text_recompute_time(dm, chunk.n_tokens, tokens_received)
        else:
            if config.level_id not in chunk.sizes:
                raise ValueError(f"chunk {chunk.chunk_id} has no level {config.label}")
            n_bytes = round(chunk.sizes[config.level_id] * size_scale)
            gpu_work = dm.decode_time(n_bytes) / decode_workers

        duration = transfer_time(8.0 * n_bytes, start, trace)
        transfer_end = start + duration
        if duration > 0:
            throughput = 8.0 * n_bytes / duration
        ready = max(transfer_end, gpu_free) + gpu_work
        gpu_free = ready
        network_free = transfer_end

        session.records.append(
            ChunkRecord(
                chunk_id=chunk.chunk_id,
                config=config,
                n_tokens=chunk.n_tokens,
                start_s=start,
                end_s=transfer_end,
                bytes=n_bytes,
                throughput_bps=throughput or 0.0,
                cumulative_s=ready,
            )
        )
        tokens_received += chunk.n_tokens
        logger.debug(
            "chunk %s -> %s: %s bytes, transfer %.4fs-%.4fs, ready %.4fs",
            chunk.chunk_id,
            config.label,
            n_bytes,
            start,
            transfer_end,
            ready,
        )

    session.finish_s = gpu_free + _prefill(dm, prompt_tokens, tokens_received)
    if session.violated:
        logger.warning(
            "SLO violated: finished at %.3fs against %.3fs (%s)",
            session.finish_s,
            slo,
            active.policy_id,
        )
    else:
        logger.info("Session finished at %.3fs within %.3fs SLO", session.finish_s, slo)
    return session
