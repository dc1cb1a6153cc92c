import os
import socket
import struct
from concurrent.futures import ThreadPoolExecutor

import pytest

from src.domain.errors import KeyNotFoundError, PayloadTooLargeError, StoreError
from src.infrastructure.kvstore import ChunkKey, KVStoreClient, KVStoreServer
from src.infrastructure.kvstore.protocol import (
    OP_GET,
    STATUS_ERROR,
    encode_request,
    read_response,
)


def _client(server: KVStoreServer, **kwargs) -> KVStoreClient:
    host, port = server.address
    return KVStoreClient(host, port, timeout=10.0, **kwargs)


def test_chunk_key_format_and_parse():
    key = ChunkKey("doc", 7, 2)
    assert str(key) == "ctx/doc/7/L2"
    assert ChunkKey.parse("ctx/doc/7/L2") == key
    assert ChunkKey.parse("ctx/doc/0/text").level is None
    for bad in ("ctx/doc/7", "ctx/a/b/L1", "ctx/doc/1/L1/extra", "doc/1/L1"):
        with pytest.raises(StoreError):
            ChunkKey.parse(bad)
    with pytest.raises(StoreError):
        ChunkKey("a/b", 0, 1)


def test_store_get_list_round_trips(store_server):
    payloads = {}
    with _client(store_server) as client:
        for i in range(1000):
            key = ChunkKey(f"ctx{i % 7}", i, i % 4)
            value = os.urandom(i % 257) + i.to_bytes(4, "little")
            client.store_kv(key, value)
            payloads[key] = value
        for key, value in payloads.items():
            assert client.get_kv(key) == value
        listed = client.list_keys("ctx/ctx3/")
    assert listed == sorted(str(key) for key in payloads if key.context_id == "ctx3")


def test_store_overwrites_and_persists_on_disk(store_server):
    key = ChunkKey("doc", 0, 1)
    with _client(store_server) as client:
        client.store_kv(key, b"first")
        client.store_kv(key, b"second")
        assert client.get_kv(key) == b"second"
    assert store_server.backend.path_for(key).read_bytes() == b"second"


def test_missing_key_is_not_found(store_server):
    with _client(store_server) as client:
        with pytest.raises(KeyNotFoundError):
            client.get_kv(ChunkKey("doc", 3, 0))
        assert client.list_keys("ctx/nothing/") == []
        # the connection stays usable after NOT_FOUND
        client.store_kv(ChunkKey("doc", 3, 0), b"x")
        assert client.get_kv("ctx/doc/3/L0") == b"x"


def test_concurrent_clients(store_server):
    def worker(worker_id: int) -> int:
        with _client(store_server) as client:
            for i in range(20):
                key = ChunkKey(f"w{worker_id}", i, i % 4)
                value = bytes([worker_id]) * (i + 1)
                client.store_kv(key, value)
                assert client.get_kv(key) == value
        return worker_id

    with ThreadPoolExecutor(max_workers=64) as executor:
        assert sorted(executor.map(worker, range(64))) == list(range(64))
    with _client(store_server) as client:
        assert len(client.list_keys("ctx/w")) == 64 * 20


def test_readers_racing_overwriters_see_whole_values(store_server):
    keys = [ChunkKey("shared", chunk, 1) for chunk in range(4)]
    # writer w stores version v of a key at index w * 8 + v
    versions = {
        key: [
            bytes([key.chunk_id, writer, version]) * (64 + 97 * version)
            for writer in range(4)
            for version in range(8)
        ]
        for key in keys
    }
    with _client(store_server) as client:
        for key in keys:
            client.store_kv(key, versions[key][0])

    def writer(writer_id: int) -> None:
        with _client(store_server) as client:
            for version in range(8):
                for key in keys:
                    client.store_kv(key, versions[key][writer_id * 8 + version])

    def reader(reader_id: int) -> list[tuple[ChunkKey, bytes]]:
        seen = []
        with _client(store_server) as client:
            for i in range(200):
                key = keys[(reader_id + i) % len(keys)]
                seen.append((key, client.get_kv(key)))
        return seen

    with ThreadPoolExecutor(max_workers=12) as executor:
        writes = [executor.submit(writer, writer_id) for writer_id in range(4)]
        reads = [executor.submit(reader, reader_id) for reader_id in range(8)]
        for future in writes:
            future.result()
        observed = [pair for future in reads for pair in future.result()]
    assert len(observed) == 8 * 200
    for key, value in observed:
        assert value in versions[key]


def test_oversize_value_is_rejected_and_connection_survives(tmp_path):
    server = KVStoreServer(root=tmp_path, host="127.0.0.1", port=0, max_value_bytes=1024)
    server.start_background()
    try:
        with _client(server) as client:
            with pytest.raises(StoreError, match="exceeds"):
                client.store_kv(ChunkKey("doc", 0, 1), b"z" * 4096)
            client.store_kv(ChunkKey("doc", 0, 1), b"z" * 1024)
            assert client.get_kv(ChunkKey("doc", 0, 1)) == b"z" * 1024
    finally:
        server.stop()


def test_client_refuses_values_over_its_limit(store_server):
    with _client(store_server, max_value_bytes=8) as client:
        with pytest.raises(PayloadTooLargeError):
            client.store_kv(ChunkKey("doc", 0, 1), b"123456789")


def test_malformed_key_gets_error_status(store_server):
    with socket.create_connection(store_server.address, timeout=5) as sock:
        sock.sendall(encode_request(OP_GET, "not-a-key"))
        status, payload = read_response(sock)
    assert status == STATUS_ERROR
    assert b"malformed" in payload


def test_unknown_opcode_closes_connection(store_server):
    with socket.create_connection(store_server.address, timeout=5) as sock:
        sock.sendall(struct.pack("<BI", 0x7F, 0))
        status, _ = read_response(sock)
        assert status == STATUS_ERROR
        assert sock.recv(1) == b""


def test_unreachable_server_raises_store_error():
    with socket.socket() as spare:
        spare.bind(("127.0.0.1", 0))
        port = spare.getsockname()[1]
    with pytest.raises(StoreError):
        KVStoreClient("127.0.0.1", port, timeout=1.0).connect()
