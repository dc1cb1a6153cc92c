"""On-disk chunk library.

``<root>/<context_id>/<chunk_id>/L<level>.cgc`` holds every encoded chunk and
``<root>/<context_id>/manifest`` describes them, one record per line::

    context_id <id>
    model_hash <16 hex digits>
    group_size <tokens>
    levels <id> <id> ...
    chunk <chunk_id> <start> <end> <bytes at each listed level>
"""

from __future__ import annotations

import logging
from pathlib import Path

from pydantic import ValidationError

from ..app.schemas import ManifestChunk
from ..domain.codec import ChunkLibrary
from ..domain.errors import ManifestError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest"


def chunk_path(root: str | Path, context_id: str, chunk_id: int, level_id: int) -> Path:
    return Path(root) / context_id / str(chunk_id) / f"L{level_id}.cgc"


def render_manifest(library: ChunkLibrary) -> str:
    lines = [
        f"context_id {library.context_id}",
        f"model_hash {library.model_hash:016x}",
        f"group_size {library.group_size}",
        "levels " + " ".join(str(level) for level in library.levels),
    ]
    for plan in library.stream_plan():
        sizes = " ".join(str(plan.sizes[level]) for level in library.levels)
        lines.append(
            f"chunk {plan.chunk_id} {plan.token_range.start} {plan.token_range.stop} {sizes}"
        )
    return "\n".join(lines) + "\n"


def save_library(library: ChunkLibrary, root: str | Path) -> Path:
    if not library.context_id or "/" in library.context_id:
        raise ManifestError(f"invalid context id '{library.context_id}'")
    base = Path(root) / library.context_id
    for (chunk_id, level_id), data in sorted(library.streams.items()):
        target = chunk_path(root, library.context_id, chunk_id, level_id)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    manifest = base / MANIFEST_NAME
    manifest.write_text(render_manifest(library), encoding="utf-8")
    logger.info("✅ Library '%s' written to %s", library.context_id, base)
    return manifest


def _parse_manifest(text: str) -> tuple[dict[str, str], list[ManifestChunk], tuple[int, ...]]:
    fields: dict[str, str] = {}
    chunks: list[ManifestChunk] = []
    levels: tuple[int, ...] = ()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        name, _, rest = line.partition(" ")
        try:
            if name == "levels":
                levels = tuple(int(token) for token in rest.split())
            elif name == "chunk":
                if not levels:
                    raise ManifestError(f"line {lineno}: chunk listed before levels")
                tokens = [int(token) for token in rest.split()]
                if len(tokens) != 3 + len(levels):
                    raise ManifestError(f"line {lineno}: expected {3 + len(levels)} fields")
                chunks.append(
                    ManifestChunk(
                        chunk_id=tokens[0],
                        start=tokens[1],
                        end=tokens[2],
                        sizes=dict(zip(levels, tokens[3:], strict=True)),
                    )
                )
            elif name in {"context_id", "model_hash", "group_size"}:
                fields[name] = rest.strip()
            else:
                raise ManifestError(f"line {lineno}: unknown record '{name}'")
        except (ValueError, ValidationError) as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
    missing = {"context_id", "model_hash", "group_size"} - fields.keys()
    if missing:
        raise ManifestError(f"manifest is missing {sorted(missing)}")
    if not levels:
        raise ManifestError("manifest lists no levels")
    return fields, chunks, levels


def load_library(root: str | Path, context_id: str) -> ChunkLibrary:
    manifest = Path(root) / context_id / MANIFEST_NAME
    try:
        text = manifest.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ManifestError(f"no manifest at {manifest}") from exc
    fields, chunks, levels = _parse_manifest(text)
    if fields["context_id"] != context_id:
        raise ManifestError(
            f"manifest describes '{fields['context_id']}', expected '{context_id}'"
        )

    chunks.sort(key=lambda chunk: chunk.chunk_id)
    cursor = 0
    streams: dict[tuple[int, int], bytes] = {}
    for expected_id, entry in enumerate(chunks):
        if entry.chunk_id != expected_id or entry.start != cursor or entry.end <= entry.start:
            raise ManifestError(f"chunk {entry.chunk_id} breaks the token tiling at {cursor}")
        cursor = entry.end
        for level_id, size in entry.sizes.items():
            path = chunk_path(root, context_id, entry.chunk_id, level_id)
            try:
                data = path.read_bytes()
            except FileNotFoundError as exc:
                raise ManifestError(f"missing chunk file {path}") from exc
            if len(data) != size:
                raise ManifestError(f"{path} is {len(data)} bytes, manifest says {size}")
            streams[(entry.chunk_id, level_id)] = data

    try:
        return ChunkLibrary(
            context_id=context_id,
            model_hash=int(fields["model_hash"], 16),
            group_size=int(fields["group_size"]),
            levels=levels,
            token_ranges=[range(entry.start, entry.end) for entry in chunks],
            streams=streams,
        )
    except ValueError as exc:
        raise ManifestError(f"invalid manifest header: {exc}") from exc
