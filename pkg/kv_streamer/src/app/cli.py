from __future__ import annotations

import argparse
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

from ..config.env import settings
from ..domain.codec import (
    DecodedChunk,
    build_library,
    collect_symbols,
    decode_chunk,
    reassemble,
    reconstruction_stats,
)
from ..domain.entropy.model import SymbolModel, profile_model
from ..domain.errors import KVStreamerError
from ..domain.kvtensor import KVDims, SynthSpec, synth_ar1
from ..domain.netsim import BandwidthTrace
from ..domain.quant import DEFAULT_LEVEL_ID, default_levels, level_by_id
from ..domain.stream import (
    AdaptivePolicy,
    DelayModel,
    FixedPolicy,
    StreamingConfig,
    StreamPolicy,
    stream_context,
)
from ..infrastructure.kvstore import ChunkKey, KVStoreClient, serve
from ..infrastructure.kvt_file import read_kvt, write_kvt
from ..infrastructure.library_store import load_library, save_library
from ..infrastructure.model_file import load_model, save_model
from ..infrastructure.trace_file import load_trace
from .reports import (
    aggregate,
    read_session_csv,
    session_summary,
    write_report,
    write_session_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Command line that argparse (or a subcommand) rejects."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _store_address(raw: str) -> tuple[str, int]:
    host, sep, port = raw.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got '{raw}'")
    return host, int(port)


def _level_ids(raw: Sequence[int] | None) -> list[int]:
    if not raw:
        return [level.id for level in default_levels()]
    return list(raw)


# --- subcommands ---


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        dims=KVDims(args.tokens, args.layers, args.channels),
        rho=args.rho,
        sigma=args.sigma,
        channel_offset_scale=args.offset_scale,
        seed=args.seed,
    )
    kv = synth_ar1(spec)
    write_kvt(kv, args.out, half=args.half)
    dims = kv.dims
    print(f"wrote {args.out}: {dims.n_tokens} x {dims.n_layers} x {dims.n_channels}")
    return EXIT_OK


def _cmd_profile(args: argparse.Namespace) -> int:
    group_size = args.group_size or settings.group_size
    corpus = []
    for path in args.input:
        kv = read_kvt(path)
        for level_id in _level_ids(args.levels):
            corpus += collect_symbols(kv, level_by_id(level_id), group_size=group_size)
    model = profile_model(corpus, args.half_width)
    save_model(model, args.out)
    print(f"model {model.model_hash:016x}: {model.n_layers} layers x {model.n_channels} channels")
    return EXIT_OK


def _cmd_encode(args: argparse.Namespace) -> int:
    kv = read_kvt(args.input)
    model = load_model(args.model)
    levels = [level_by_id(level_id) for level_id in _level_ids(args.levels)]
    library = build_library(
        kv,
        model,
        chunk_tokens=args.chunk_tokens,
        levels=levels,
        context_id=args.context_id,
        group_size=args.group_size,
        workers=args.workers,
    )
    save_library(library, args.out_dir)
    for level in levels:
        print(f"{level.label}: {library.total_bytes(level.id)} bytes")
    if DEFAULT_LEVEL_ID in library.levels:
        print(f"storage overhead: {library.storage_overhead():.3f}x of L{DEFAULT_LEVEL_ID}")

    if args.store:
        host, port = args.store
        with KVStoreClient(host, port) as client:
            for (chunk_id, level_id), data in sorted(library.streams.items()):
                client.store_kv(ChunkKey(args.context_id, chunk_id, level_id), data)
        logger.info("✅ Pushed %s chunks to %s:%s", len(library.streams), host, port)
    return EXIT_OK


def _session_levels(path: str, default_level: int, chunk_ids: Sequence[int]) -> dict[int, int]:
    """Per-chunk level chosen in a session log; text chunks fall back to ``default_level``."""
    rows, _ = read_session_csv(path)
    chosen: dict[int, int] = {}
    for row in rows:
        config = StreamingConfig.parse(row.config)
        chosen[row.chunk_id] = default_level if config.level_id is None else config.level_id
    missing = sorted(set(chunk_ids) - chosen.keys())
    if missing:
        raise UsageError(f"session {path} has no entry for chunks {missing}")
    return chosen


def _decode_all(payloads: list[bytes], model: SymbolModel, workers: int) -> list[DecodedChunk]:
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        return list(executor.map(lambda data: decode_chunk(data, model, workers=1), payloads))


def _finish_decode(chunks: list[DecodedChunk], args: argparse.Namespace) -> None:
    kv = reassemble(chunks)
    write_kvt(kv, args.out)
    print(f"wrote {args.out}: {kv.dims.n_tokens} tokens")
    if args.original:
        stats = reconstruction_stats(read_kvt(args.original), kv)
        print(f"max_abs_error={stats.max_abs_error:.6g} mse={stats.mse:.6g}")


def _cmd_decode(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    library = load_library(args.library, args.context_id)
    if args.session:
        chosen = _session_levels(args.session, min(library.levels), range(library.n_chunks))
    else:
        chosen = {chunk_id: args.level for chunk_id in range(library.n_chunks)}
    payloads = [library.chunk(chunk_id, chosen[chunk_id]) for chunk_id in range(library.n_chunks)]
    _finish_decode(_decode_all(payloads, model, args.workers or settings.codec_workers), args)
    return EXIT_OK


def _policy_from_args(args: argparse.Namespace) -> StreamPolicy:
    if args.no_adapt:
        return FixedPolicy(StreamingConfig.kv(args.fixed_level))
    return AdaptivePolicy(args.prior_bps, allow_text=not args.no_text)


def _cmd_simulate(args: argparse.Namespace) -> int:
    library = load_library(args.library, args.context_id)
    if args.trace:
        trace = load_trace(args.trace)
    elif args.bandwidth:
        trace = BandwidthTrace.constant(args.bandwidth, label=f"const-{args.bandwidth:g}")
    else:
        raise UsageError("simulate needs --trace or --bandwidth")
    dm = DelayModel(
        a=args.a, b=args.b, c=args.c, d=args.d, rtt=args.rtt, slowdown=args.slowdown
    )
    session = stream_context(
        library,
        trace,
        args.slo,
        dm,
        policy=_policy_from_args(args),
        decode_workers=args.decode_workers,
        pipelined=not args.serial,
        prompt_tokens=args.prompt_tokens,
        size_scale=args.size_scale,
    )
    summary = session_summary(session, args.label)
    if args.out:
        write_session_csv(session, args.out, args.label)
    quality = " ".join(
        f"quality_{name}={getattr(summary, f'quality_{name}'):.3f}"
        for name in ("text", "L0", "L1", "L2", "L3")
    )
    print(f"violated={int(summary.violated)} finish_s={summary.finish_s:.4f} {quality}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    serve(args.root, args.host, args.port)
    return EXIT_OK


def _cmd_fetch(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    host, port = args.store
    prefix = f"ctx/{args.context_id}/"
    with KVStoreClient(host, port) as client:
        keys = [ChunkKey.parse(key) for key in client.list_keys(prefix)]
        chunk_ids = sorted({key.chunk_id for key in keys if key.level is not None})
        if not chunk_ids:
            raise KVStreamerError(f"store holds no chunks for '{args.context_id}'")
        if args.session:
            stored = sorted({key.level for key in keys if key.level is not None})
            chosen = _session_levels(args.session, stored[0], chunk_ids)
        else:
            chosen = {chunk_id: args.level for chunk_id in chunk_ids}
        payloads = [
            client.get_kv(ChunkKey(args.context_id, chunk_id, chosen[chunk_id]))
            for chunk_id in chunk_ids
        ]
    logger.info("Fetched %s chunks (%s bytes)", len(payloads), sum(map(len, payloads)))
    _finish_decode(_decode_all(payloads, model, args.workers or settings.codec_workers), args)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    summaries = [read_session_csv(path)[1] for path in args.sessions]
    rows = aggregate(summaries)
    write_report(rows, args.out)
    for row in rows:
        print(
            f"{row.trace} slo={row.slo_s:g}s violation_rate={row.violation_rate:.3f} "
            f"mean_finish={row.mean_finish_s:.3f}s"
        )
    return EXIT_OK


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kv-streamer", description="KV cache codec and streaming simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate a synthetic AR(1) cache")
    synth.add_argument("--tokens", type=int, required=True)
    synth.add_argument("--layers", type=int, required=True)
    synth.add_argument("--channels", type=int, required=True)
    synth.add_argument("--rho", type=float, default=0.98)
    synth.add_argument("--sigma", type=float, default=1.0)
    synth.add_argument("--offset-scale", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--half", action="store_true", help="write 16-bit floats")
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=_cmd_synth)

    profile = sub.add_parser("profile", help="profile a symbol model from .kvt files")
    profile.add_argument("--input", nargs="+", required=True)
    profile.add_argument("--levels", type=int, nargs="*")
    profile.add_argument("--group-size", type=int)
    profile.add_argument("--half-width", type=int, default=settings.alphabet_half_width)
    profile.add_argument("--out", required=True)
    profile.set_defaults(handler=_cmd_profile)

    encode = sub.add_parser("encode", help="encode a .kvt into a chunk library")
    encode.add_argument("--input", required=True)
    encode.add_argument("--model", required=True)
    encode.add_argument("--out-dir", required=True)
    encode.add_argument("--context-id", default="context")
    encode.add_argument("--chunk-tokens", type=int)
    encode.add_argument("--group-size", type=int)
    encode.add_argument("--levels", type=int, nargs="*")
    encode.add_argument("--workers", type=int)
    encode.add_argument("--store", type=_store_address, help="also push chunks to HOST:PORT")
    encode.set_defaults(handler=_cmd_encode)

    decode = sub.add_parser("decode", help="decode a library back into a .kvt")
    decode.add_argument("--library", required=True)
    decode.add_argument("--context-id", default="context")
    decode.add_argument("--model", required=True)
    decode.add_argument("--level", type=int, default=DEFAULT_LEVEL_ID)
    decode.add_argument("--session", help="take each chunk's level from a session CSV")
    decode.add_argument("--original", help="report reconstruction error against this .kvt")
    decode.add_argument("--workers", type=int)
    decode.add_argument("--out", required=True)
    decode.set_defaults(handler=_cmd_decode)

    simulate = sub.add_parser("simulate", help="stream a library over a bandwidth trace")
    simulate.add_argument("--library", required=True)
    simulate.add_argument("--context-id", default="context")
    simulate.add_argument("--trace", help="time_s,bandwidth_bps CSV")
    simulate.add_argument("--bandwidth", type=float, help="constant bandwidth in bits/s")
    simulate.add_argument("--slo", type=float, required=True)
    simulate.add_argument("--a", type=float, default=0.0)
    simulate.add_argument("--b", type=float, default=0.0)
    simulate.add_argument("--c", type=float, default=0.0)
    simulate.add_argument("--d", type=float, default=0.0)
    simulate.add_argument("--rtt", type=float, default=0.0)
    simulate.add_argument("--slowdown", type=float, default=1.0)
    simulate.add_argument("--no-adapt", action="store_true")
    simulate.add_argument("--fixed-level", type=int, default=DEFAULT_LEVEL_ID)
    simulate.add_argument("--no-text", action="store_true")
    simulate.add_argument("--prior-bps", type=float)
    simulate.add_argument("--size-scale", type=float, default=1.0)
    simulate.add_argument("--serial", action="store_true", help="no transfer/decode overlap")
    simulate.add_argument("--decode-workers", type=int, default=1)
    simulate.add_argument("--prompt-tokens", type=int, default=0)
    simulate.add_argument("--label")
    simulate.add_argument("--out")
    simulate.set_defaults(handler=_cmd_simulate)

    serve_cmd = sub.add_parser("serve", help="run the chunk store server")
    serve_cmd.add_argument("--root", default=settings.store_root)
    serve_cmd.add_argument("--host", default=settings.store_host)
    serve_cmd.add_argument("--port", type=int, default=settings.store_port)
    serve_cmd.set_defaults(handler=_cmd_serve)

    fetch = sub.add_parser("fetch", help="fetch chunks from a store and decode them")
    fetch.add_argument(
        "--store",
        type=_store_address,
        default=(settings.store_host, settings.store_port),
    )
    fetch.add_argument("--context-id", default="context")
    fetch.add_argument("--model", required=True)
    fetch.add_argument("--level", type=int, default=DEFAULT_LEVEL_ID)
    fetch.add_argument("--session")
    fetch.add_argument("--original")
    fetch.add_argument("--workers", type=int)
    fetch.add_argument("--out", required=True)
    fetch.set_defaults(handler=_cmd_fetch)

    report = sub.add_parser("report", help="aggregate session CSVs")
    report.add_argument("--sessions", nargs="+", required=True)
    report.add_argument("--out", required=True)
    report.set_defaults(handler=_cmd_report)

    return parser


def _configure_logging() -> None:
    level = logging.DEBUG if settings.enable_debug_logging else logging.INFO
    logging.basicConfig(level=level, format="[%(asctime)s] [%(levelname)s] %(message)s")


def run(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except SystemExit as exc:
        # argparse exits 0 after --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc)
        parser.print_usage()
        return EXIT_USAGE
    except (KVStreamerError, OSError) as exc:
        logger.error("❌ %s", exc)
        return EXIT_RUNTIME
    except ValueError as exc:
        logger.error("❌ invalid argument: %s", exc)
        return EXIT_USAGE


__all__ = ["build_parser", "run"]
