from __future__ import annotations

from pathlib import Path

import pandas as pd

from ..domain.errors import TraceFormatError
from ..domain.netsim import BandwidthTrace

TRACE_COLUMNS = ["time_s", "bandwidth_bps"]


def save_trace(trace: BandwidthTrace, path: str | Path) -> None:
    frame = pd.DataFrame(list(trace.segments), columns=TRACE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")


def load_trace(path: str | Path) -> BandwidthTrace:
    """Read a ``time_s,bandwidth_bps`` CSV; each row holds until the next one."""
    target = Path(path)
    try:
        frame = pd.read_csv(target, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise TraceFormatError(f"cannot parse trace {target}: {exc}") from exc

    if list(frame.columns) != TRACE_COLUMNS:
        raise TraceFormatError(
            f"trace header must be {','.join(TRACE_COLUMNS)}, got {list(frame.columns)}"
        )
    try:
        numeric = frame.apply(pd.to_numeric, errors="raise").astype(float)
    except (ValueError, TypeError) as exc:
        raise TraceFormatError(f"trace {target} has a non-numeric row") from exc
    if numeric.isna().any().any():
        raise TraceFormatError(f"trace {target} has an incomplete row")

    segments = tuple(
        (float(t), float(b))
        for t, b in zip(numeric["time_s"], numeric["bandwidth_bps"], strict=True)
    )
    return BandwidthTrace(segments, label=target.stem)
