import pytest

from src.domain.codec import build_library
from src.domain.errors import ManifestError
from src.infrastructure.library_store import (
    MANIFEST_NAME,
    chunk_path,
    load_library,
    render_manifest,
    save_library,
)


@pytest.fixture()
def library(cache, model):
    return build_library(cache, model, chunk_tokens=20, context_id="doc")


def test_manifest_lists_every_chunk(library):
    lines = render_manifest(library).splitlines()
    assert lines[0] == "context_id doc"
    assert lines[1] == f"model_hash {library.model_hash:016x}"
    assert lines[3] == "levels 0 1 2 3"
    chunk_lines = [line for line in lines if line.startswith("chunk ")]
    assert len(chunk_lines) == 3
    first = chunk_lines[0].split()
    assert first[1:4] == ["0", "0", "20"]
    assert int(first[4]) == library.size(0, 0)


def test_save_and_load_round_trip(tmp_path, library):
    manifest = save_library(library, tmp_path)
    assert manifest == tmp_path / "doc" / MANIFEST_NAME
    assert chunk_path(tmp_path, "doc", 2, 3).read_bytes() == library.chunk(2, 3)

    restored = load_library(tmp_path, "doc")
    assert restored.model_hash == library.model_hash
    assert restored.token_ranges == library.token_ranges
    assert restored.streams == library.streams


def test_missing_or_resized_chunk_file_is_reported(tmp_path, library):
    save_library(library, tmp_path)
    chunk_path(tmp_path, "doc", 1, 2).write_bytes(b"short")
    with pytest.raises(ManifestError, match="manifest says"):
        load_library(tmp_path, "doc")
    chunk_path(tmp_path, "doc", 1, 2).unlink()
    with pytest.raises(ManifestError, match="missing chunk file"):
        load_library(tmp_path, "doc")


def test_malformed_manifests_are_rejected(tmp_path, library):
    save_library(library, tmp_path)
    manifest = tmp_path / "doc" / MANIFEST_NAME
    text = manifest.read_text()

    manifest.write_text(text.replace("levels 0 1 2 3\n", ""))
    with pytest.raises(ManifestError):
        load_library(tmp_path, "doc")

    manifest.write_text(text.replace("chunk 1 20 40", "chunk 1 25 40"))
    with pytest.raises(ManifestError, match="tiling"):
        load_library(tmp_path, "doc")

    manifest.write_text(text + "bogus record\n")
    with pytest.raises(ManifestError, match="unknown record"):
        load_library(tmp_path, "doc")

    with pytest.raises(ManifestError, match="no manifest"):
        load_library(tmp_path, "other")
