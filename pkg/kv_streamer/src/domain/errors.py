class KVStreamerError(Exception):
    """Base class for every error raised by the kv-streamer domain."""


class KVDimensionError(KVStreamerError):
    """Invalid or overflowing KV tensor dimensions."""


class KVFormatError(KVStreamerError):
    """Malformed .kvt file (bad magic, unsupported version, truncated payload)."""


class QuantizationError(KVStreamerError):
    """Quantizer input that cannot be represented (NaN/Inf, bad bin size)."""


class ModelMismatchError(KVStreamerError):
    """Symbol model does not match the data or bitstream it is used with."""


class ModelFormatError(KVStreamerError):
    """Malformed or corrupted .sym model file."""


class StreamExhaustedError(KVStreamerError):
    """Arithmetic decoder ran past the end of its bitstream."""


class ChunkFormatError(KVStreamerError):
    """Malformed, truncated or corrupted encoded chunk."""


class CoverageError(KVStreamerError):
    """Decoded chunks leave a gap or overlap on the token axis."""


class ManifestError(KVStreamerError):
    """Library manifest is missing entries or cannot be parsed."""


class TraceFormatError(KVStreamerError):
    """Malformed bandwidth trace."""


class StoreError(KVStreamerError):
    """KV store request failed."""


class KeyNotFoundError(StoreError):
    """Requested key is not present in the KV store."""


class PayloadTooLargeError(StoreError):
    """Value exceeds the wire protocol's payload limit."""


class ReportFormatError(KVStreamerError):
    """Session log or report CSV that does not follow its documented layout."""
