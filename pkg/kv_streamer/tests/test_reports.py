import pytest
from pydantic import ValidationError

from src.app.reports import (
    REPORT_COLUMNS,
    SESSION_COLUMNS,
    aggregate,
    read_report,
    read_session_csv,
    session_summary,
    write_report,
    write_session_csv,
)
from src.app.schemas import SessionSummary
from src.domain.codec import ChunkPlan
from src.domain.errors import ReportFormatError
from src.domain.netsim import BandwidthTrace
from src.domain.stream import AdaptivePolicy, DelayModel, FixedPolicy, stream_context

MB = 1_000_000
SIZES = {0: 200 * MB, 1: 100 * MB, 2: 50 * MB, 3: 25 * MB}
PLAN = [ChunkPlan(i, range(1500 * i, 1500 * (i + 1)), SIZES) for i in range(10)]
DROPPING = BandwidthTrace.from_mapping({0: 2e9, 2: 0.2e9, 4: 1e9}, label="drop")


def _session(policy):
    return stream_context(PLAN, DROPPING, 4.0, DelayModel(a=2.667e-8), policy=policy)


def test_session_csv_round_trip(tmp_path):
    session = _session(AdaptivePolicy())
    path = tmp_path / "session.csv"
    write_session_csv(session, path)

    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(SESSION_COLUMNS)
    assert lines[-1].startswith("# trace=drop,policy=adaptive,slo_s=4.0,violated=0,")

    rows, summary = read_session_csv(path)
    assert [row.config for row in rows] == [config.label for config in session.configs()]
    assert [row.cumulative_s for row in rows] == [r.cumulative_s for r in session.records]
    assert summary.finish_s == session.finish_s
    assert summary.quality_text == session.quality()["text"]


def test_summary_label_override_and_validation():
    session = _session(FixedPolicy())
    summary = session_summary(session, "lte")
    assert summary.trace == "lte"
    assert summary.violated
    assert summary.quality_L1 == 1.0
    with pytest.raises(ValidationError):
        session_summary(session, "bad,label")


def test_session_csv_requires_summary_and_header(tmp_path):
    path = tmp_path / "broken.csv"
    path.write_text(",".join(SESSION_COLUMNS) + "\n0,L1,0,1,10,80,1\n")
    with pytest.raises(ReportFormatError, match="summary"):
        read_session_csv(path)
    path.write_text("chunk,config\n# trace=t,policy=p,slo_s=1,violated=0,finish_s=0.5\n")
    with pytest.raises(ReportFormatError, match="header"):
        read_session_csv(path)
    path.write_text(",".join(SESSION_COLUMNS) + "\n# trace=t,policy=p,slo_s=-1,violated=0\n")
    with pytest.raises(ReportFormatError):
        read_session_csv(path)


def _summary(trace, slo, violated, finish, text=0.0):
    return SessionSummary(
        trace=trace,
        policy="adaptive",
        slo_s=slo,
        violated=violated,
        finish_s=finish,
        quality_text=text,
        quality_L1=1.0 - text,
    )


def test_aggregate_groups_by_trace_and_slo(tmp_path):
    summaries = [
        _summary("wifi", 1.0, True, 1.4),
        _summary("wifi", 1.0, False, 0.6, text=0.5),
        _summary("wifi", 2.0, False, 1.0),
        _summary("lte", 1.0, True, 3.0),
    ]
    rows = aggregate(summaries)
    assert [(row.trace, row.slo_s) for row in rows] == [("lte", 1.0), ("wifi", 1.0), ("wifi", 2.0)]
    wifi = rows[1]
    assert wifi.violation_rate == pytest.approx(0.5)
    assert wifi.mean_finish_s == pytest.approx(1.0)
    assert wifi.quality_text == pytest.approx(0.25)
    assert aggregate([]) == []

    path = tmp_path / "report.csv"
    write_report(rows, path)
    assert path.read_text().splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert read_report(path) == rows


def test_report_with_wrong_header_is_rejected(tmp_path):
    path = tmp_path / "report.csv"
    path.write_text("trace,slo_s\nwifi,1.0\n")
    with pytest.raises(ReportFormatError):
        read_report(path)
