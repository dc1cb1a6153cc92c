import pytest

from src.app.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from src.app.reports import read_report, read_session_csv
from src.domain.netsim import BandwidthTrace
from src.infrastructure.kvt_file import read_kvt
from src.infrastructure.trace_file import save_trace


@pytest.fixture()
def workspace(tmp_path):
    kvt = tmp_path / "context.kvt"
    model = tmp_path / "model.sym"
    library = tmp_path / "library"
    assert run(["synth", "--tokens", "60", "--layers", "3", "--channels", "4", "--seed", "3",
                "--out", str(kvt)]) == EXIT_OK
    assert run(["profile", "--input", str(kvt), "--out", str(model)]) == EXIT_OK
    assert run(["encode", "--input", str(kvt), "--model", str(model), "--out-dir", str(library),
                "--context-id", "doc", "--chunk-tokens", "20"]) == EXIT_OK
    return tmp_path


def test_synth_writes_requested_dims(workspace):
    kv = read_kvt(workspace / "context.kvt")
    assert kv.dims.shape == (60, 3, 4)


def test_encode_reports_levels_and_decode_restores_dims(workspace, capsys):
    out = workspace / "decoded.kvt"
    code = run(["decode", "--library", str(workspace / "library"), "--context-id", "doc",
                "--model", str(workspace / "model.sym"), "--level", "0",
                "--original", str(workspace / "context.kvt"), "--out", str(out)])
    assert code == EXIT_OK
    assert read_kvt(out).dims == read_kvt(workspace / "context.kvt").dims
    assert "max_abs_error=" in capsys.readouterr().out


def test_simulate_and_report(workspace, capsys):
    trace = workspace / "slow.csv"
    save_trace(BandwidthTrace.from_mapping({0: 1e3, 1: 2e3}), trace)
    sessions = []
    for name, extra in (("fixed", ["--no-adapt"]), ("adaptive", [])):
        session = workspace / f"{name}.csv"
        code = run(["simulate", "--library", str(workspace / "library"), "--context-id", "doc",
                    "--trace", str(trace), "--slo", "0.5", *extra, "--out", str(session)])
        assert code == EXIT_OK
        sessions.append(session)

    captured = capsys.readouterr().out
    assert "violated=1" in captured
    rows, summary = read_session_csv(sessions[0])
    assert summary.trace == "slow"
    assert summary.policy == "fixed"
    assert {row.config for row in rows} == {"L1"}

    report = workspace / "report.csv"
    assert run(["report", "--sessions", *map(str, sessions), "--out", str(report)]) == EXIT_OK
    (row,) = read_report(report)
    assert row.trace == "slow"
    assert row.violation_rate == 1.0


def test_simulate_with_constant_bandwidth_meets_slo(workspace, capsys):
    code = run(["simulate", "--library", str(workspace / "library"), "--context-id", "doc",
                "--bandwidth", "1e9", "--slo", "1", "--label", "fast"])
    assert code == EXIT_OK
    assert "violated=0" in capsys.readouterr().out


def test_decode_follows_session_levels(workspace):
    session = workspace / "session.csv"
    assert run(["simulate", "--library", str(workspace / "library"), "--context-id", "doc",
                "--bandwidth", "1e9", "--slo", "1", "--no-adapt", "--fixed-level", "3",
                "--out", str(session)]) == EXIT_OK
    by_session = workspace / "by_session.kvt"
    by_level = workspace / "by_level.kvt"
    common = ["--library", str(workspace / "library"), "--context-id", "doc",
              "--model", str(workspace / "model.sym")]
    assert run(["decode", *common, "--session", str(session), "--out", str(by_session)]) == 0
    assert run(["decode", *common, "--level", "3", "--out", str(by_level)]) == 0
    assert by_session.read_bytes() == by_level.read_bytes()


def test_encode_pushes_to_store_and_fetch_decodes(workspace, store_server):
    host, port = store_server.address
    address = f"{host}:{port}"
    assert run(["encode", "--input", str(workspace / "context.kvt"),
                "--model", str(workspace / "model.sym"), "--out-dir", str(workspace / "copy"),
                "--context-id", "remote", "--chunk-tokens", "20", "--store", address]) == 0

    fetched = workspace / "fetched.kvt"
    assert run(["fetch", "--store", address, "--context-id", "remote",
                "--model", str(workspace / "model.sym"), "--level", "2",
                "--out", str(fetched)]) == EXIT_OK
    local = workspace / "local.kvt"
    assert run(["decode", "--library", str(workspace / "copy"), "--context-id", "remote",
                "--model", str(workspace / "model.sym"), "--level", "2",
                "--out", str(local)]) == EXIT_OK
    assert fetched.read_bytes() == local.read_bytes()

    missing = run(["fetch", "--store", address, "--context-id", "absent",
                   "--model", str(workspace / "model.sym"), "--out", str(fetched)])
    assert missing == EXIT_RUNTIME


def test_exit_codes(tmp_path):
    assert run(["--help"]) == EXIT_OK
    assert run([]) == EXIT_USAGE
    assert run(["bogus"]) == EXIT_USAGE
    assert run(["synth", "--tokens", "x", "--layers", "1", "--channels", "1",
                "--out", "a.kvt"]) == EXIT_USAGE
    assert run(["fetch", "--store", "nowhere", "--model", "m", "--out", "o"]) == EXIT_USAGE
    assert run(["decode", "--library", str(tmp_path), "--model", str(tmp_path / "none.sym"),
                "--out", str(tmp_path / "o.kvt")]) == EXIT_RUNTIME
    assert run(["synth", "--tokens", "4", "--layers", "0", "--channels", "1",
                "--out", str(tmp_path / "z.kvt")]) == EXIT_RUNTIME


def test_unknown_level_is_a_usage_error(workspace):
    kvt = str(workspace / "context.kvt")
    model = str(workspace / "model.sym")
    assert run(["profile", "--input", kvt, "--levels", "7", "--out", model]) == EXIT_USAGE
    assert run(["encode", "--input", kvt, "--model", model, "--out-dir",
                str(workspace / "other"), "--levels", "1", "7"]) == EXIT_USAGE


def test_session_missing_chunks_is_a_usage_error(workspace):
    session = workspace / "partial.csv"
    session.write_text(
        "chunk_id,config,start_s,end_s,bytes,throughput_bps,cumulative_s\n"
        "0,L2,0,0.1,100,8000,0.1\n"
        "# trace=t,policy=fixed,slo_s=1.0,violated=0,finish_s=0.1,quality_text=0.0,"
        "quality_L0=0.0,quality_L1=0.0,quality_L2=1.0,quality_L3=0.0\n"
    )
    code = run(["decode", "--library", str(workspace / "library"), "--context-id", "doc",
                "--model", str(workspace / "model.sym"), "--session", str(session),
                "--out", str(workspace / "partial.kvt")])
    assert code == EXIT_USAGE
    assert not (workspace / "partial.kvt").exists()
