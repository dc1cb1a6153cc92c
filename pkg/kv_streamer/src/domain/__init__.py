from .codec import (
    ChunkLibrary,
    DecodedChunk,
    EncodedChunk,
    build_library,
    decode_chunk,
    encode_chunk,
    reassemble,
)
from .kvtensor import KVCache, KVDims, SynthSpec, synth_ar1
from .netsim import BandwidthTrace, random_trace, transfer_time
from .stream import (
    AdaptivePolicy,
    DelayModel,
    FixedPolicy,
    StreamingConfig,
    StreamSession,
    adapt_next_config,
    stream_context,
)

__all__ = [
    "AdaptivePolicy",
    "BandwidthTrace",
    "ChunkLibrary",
    "DecodedChunk",
    "DelayModel",
    "EncodedChunk",
    "FixedPolicy",
    "KVCache",
    "KVDims",
    "StreamSession",
    "StreamingConfig",
    "SynthSpec",
    "adapt_next_config",
    "build_library",
    "decode_chunk",
    "encode_chunk",
    "random_trace",
    "reassemble",
    "stream_context",
    "synth_ar1",
    "transfer_time",
]
