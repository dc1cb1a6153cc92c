from collections.abc import Iterator
from pathlib import Path

import pytest

from src.domain.codec import collect_symbols
from src.domain.entropy.model import SymbolModel, profile_model
from src.domain.kvtensor import KVCache, KVDims, SynthSpec, synth_ar1
from src.domain.quant import default_levels
from src.infrastructure.kvstore import KVStoreServer

FIXTURES = Path(__file__).parent / "fixtures"


def small_cache(n_tokens: int = 60, seed: int = 0, offset_scale: float = 0.0) -> KVCache:
    spec = SynthSpec(KVDims(n_tokens, 4, 8), channel_offset_scale=offset_scale, seed=seed)
    return synth_ar1(spec)


def model_for(kv: KVCache, group_size: int = 10) -> SymbolModel:
    corpus = []
    for level in default_levels():
        corpus += collect_symbols(kv, level, group_size=group_size)
    return profile_model(corpus)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="module")
def cache() -> KVCache:
    return small_cache()


@pytest.fixture(scope="module")
def model(cache: KVCache) -> SymbolModel:
    return model_for(cache)


@pytest.fixture()
def store_server(tmp_path: Path) -> Iterator[KVStoreServer]:
    server = KVStoreServer(root=tmp_path / "store", host="127.0.0.1", port=0)
    server.start_background()
    try:
        yield server
    finally:
        server.stop()
