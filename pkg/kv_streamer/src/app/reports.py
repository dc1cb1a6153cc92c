"""Session log and aggregate report CSVs.

A session log is the per-chunk table followed by one ``# key=value,...``
summary line. The aggregate report groups summaries by (trace, slo_s).
"""

from __future__ import annotations

import io
from collections.abc import Iterable
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

from ..domain.errors import ReportFormatError
from ..domain.stream import StreamSession
from .schemas import ReportRow, SessionRecordRow, SessionSummary

SESSION_COLUMNS = [
    "chunk_id",
    "config",
    "start_s",
    "end_s",
    "bytes",
    "throughput_bps",
    "cumulative_s",
]
REPORT_COLUMNS = list(ReportRow.model_fields)
SUMMARY_PREFIX = "# "
_FLOAT_FORMAT = "%.17g"


def session_rows(session: StreamSession) -> list[SessionRecordRow]:
    return [
        SessionRecordRow(
            chunk_id=record.chunk_id,
            config=record.config.label,
            start_s=record.start_s,
            end_s=record.end_s,
            bytes=record.bytes,
            throughput_bps=record.throughput_bps,
            cumulative_s=record.cumulative_s,
        )
        for record in session.records
    ]


def session_summary(session: StreamSession, label: str | None = None) -> SessionSummary:
    quality = session.quality()
    return SessionSummary(
        trace=label or session.trace_label or "trace",
        policy=session.policy_id or "policy",
        slo_s=session.slo,
        violated=session.violated,
        finish_s=session.finish_s,
        quality_text=quality["text"],
        quality_L0=quality["L0"],
        quality_L1=quality["L1"],
        quality_L2=quality["L2"],
        quality_L3=quality["L3"],
    )


def _summary_line(summary: SessionSummary) -> str:
    pairs = []
    for name, value in summary.model_dump().items():
        if isinstance(value, bool):
            text = "1" if value else "0"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        pairs.append(f"{name}={text}")
    return SUMMARY_PREFIX + ",".join(pairs)


def write_session_csv(session: StreamSession, path: str | Path, label: str | None = None) -> None:
    records = [row.model_dump() for row in session_rows(session)]
    frame = pd.DataFrame(records, columns=SESSION_COLUMNS)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")
    buffer.write(_summary_line(session_summary(session, label)) + "\n")
    Path(path).write_text(buffer.getvalue(), encoding="utf-8")


def _parse_summary(line: str) -> SessionSummary:
    pairs = {}
    for item in line[len(SUMMARY_PREFIX) :].split(","):
        name, sep, value = item.partition("=")
        if not sep:
            raise ReportFormatError(f"summary item '{item}' is not key=value")
        pairs[name.strip()] = value.strip()
    try:
        return SessionSummary(**pairs)
    except ValidationError as exc:
        raise ReportFormatError(f"invalid session summary: {exc}") from exc


def read_session_csv(path: str | Path) -> tuple[list[SessionRecordRow], SessionSummary]:
    text = Path(path).read_text(encoding="utf-8")
    table_lines = []
    summary: SessionSummary | None = None
    for line in text.splitlines():
        if line.startswith(SUMMARY_PREFIX):
            summary = _parse_summary(line)
        elif line.strip():
            table_lines.append(line)
    if summary is None:
        raise ReportFormatError(f"{path} has no summary line")
    if not table_lines or table_lines[0].split(",") != SESSION_COLUMNS:
        raise ReportFormatError(f"{path} does not start with the session header")

    frame = pd.read_csv(io.StringIO("\n".join(table_lines)), float_precision="round_trip")
    try:
        rows = [SessionRecordRow(**record) for record in frame.to_dict(orient="records")]
    except ValidationError as exc:
        raise ReportFormatError(f"invalid session row in {path}: {exc}") from exc
    return rows, summary


def aggregate(summaries: Iterable[SessionSummary]) -> list[ReportRow]:
    frame = pd.DataFrame([summary.model_dump() for summary in summaries])
    if frame.empty:
        return []
    frame["violated"] = frame["violated"].astype(float)
    grouped = (
        frame.groupby(["trace", "slo_s"], sort=True)
        .agg(
            violation_rate=("violated", "mean"),
            mean_finish_s=("finish_s", "mean"),
            quality_text=("quality_text", "mean"),
            quality_L0=("quality_L0", "mean"),
            quality_L1=("quality_L1", "mean"),
            quality_L2=("quality_L2", "mean"),
            quality_L3=("quality_L3", "mean"),
        )
        .reset_index()
    )
    return [ReportRow(**record) for record in grouped.to_dict(orient="records")]


def write_report(rows: Iterable[ReportRow], path: str | Path) -> None:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=REPORT_COLUMNS)
    frame.to_csv(path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")


def read_report(path: str | Path) -> list[ReportRow]:
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"trace": str})
    if list(frame.columns) != REPORT_COLUMNS:
        raise ReportFormatError(f"report header must be {','.join(REPORT_COLUMNS)}")
    try:
        return [ReportRow(**record) for record in frame.to_dict(orient="records")]
    except ValidationError as exc:
        raise ReportFormatError(f"invalid report row in {path}: {exc}") from exc
