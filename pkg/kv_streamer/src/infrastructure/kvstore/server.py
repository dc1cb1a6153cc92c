from __future__ import annotations

import logging
import os
import socket
import socketserver
import tempfile
import threading
from pathlib import Path

from ...config.env import settings
from ...domain.errors import StoreError
from .protocol import (
    OP_GET,
    OP_LIST,
    OP_STORE,
    STATUS_ERROR,
    STATUS_NOT_FOUND,
    STATUS_OK,
    ChunkKey,
    OversizeValueError,
    encode_response,
    read_request,
)

logger = logging.getLogger(__name__)

CHUNK_SUFFIX = ".cgc"


class FilesystemBackend:
    """Stores each key at ``<root>/<context_id>/<chunk_id>/<level>.cgc``."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: ChunkKey) -> Path:
        return self.root / key.context_id / str(key.chunk_id) / f"{key.level_label}{CHUNK_SUFFIX}"

    def put(self, key: ChunkKey, value: bytes) -> None:
        target = self.path_for(key)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(value)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, target)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise

    def get(self, key: ChunkKey) -> bytes | None:
        try:
            return self.path_for(key).read_bytes()
        except FileNotFoundError:
            return None

    def keys(self, prefix: str = "") -> list[str]:
        found: list[str] = []
        for path in self.root.glob(f"*/*/*{CHUNK_SUFFIX}"):
            context_dir, chunk_dir = path.parent.parent.name, path.parent.name
            raw = f"ctx/{context_dir}/{chunk_dir}/{path.name[: -len(CHUNK_SUFFIX)]}"
            try:
                ChunkKey.parse(raw)
            except StoreError:
                continue
            if raw.startswith(prefix):
                found.append(raw)
        return sorted(found)


class _RequestHandler(socketserver.BaseRequestHandler):
    server: KVStoreServer

    def handle(self) -> None:
        sock: socket.socket = self.request
        peer = self.client_address
        while True:
            try:
                request = read_request(sock, self.server.max_value_bytes)
            except OversizeValueError as exc:
                logger.warning("Rejecting oversize STORE from %s: %s", peer, exc)
                if not self._reply(STATUS_ERROR, str(exc).encode()):
                    return
                continue
            except (StoreError, UnicodeDecodeError) as exc:
                logger.warning("Malformed request from %s: %s", peer, exc)
                self._reply(STATUS_ERROR, str(exc).encode())
                return
            except OSError:
                return
            if request is None:
                return
            status, payload = self.server.dispatch(request.opcode, request.key, request.value)
            if not self._reply(status, payload):
                return

    def _reply(self, status: int, payload: bytes) -> bool:
        try:
            self.request.sendall(encode_response(status, payload))
            return True
        except OSError:
            return False


class KVStoreServer(socketserver.ThreadingTCPServer):
    """Serves STORE / GET / LIST over the length-prefixed protocol, one thread per connection."""

    allow_reuse_address = True
    daemon_threads = True
    request_queue_size = 128

    def __init__(
        self,
        root: str | Path | None = None,
        host: str | None = None,
        port: int | None = None,
        max_value_bytes: int | None = None,
    ) -> None:
        self.backend = FilesystemBackend(settings.store_root if root is None else root)
        self.max_value_bytes = (
            settings.store_max_value_bytes if max_value_bytes is None else max_value_bytes
        )
        self._thread: threading.Thread | None = None
        address = (
            settings.store_host if host is None else host,
            settings.store_port if port is None else port,
        )
        super().__init__(address, _RequestHandler)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return str(host), int(port)

    def dispatch(self, opcode: int, key: str, value: bytes | None) -> tuple[int, bytes]:
        try:
            if opcode == OP_LIST:
                return STATUS_OK, "\n".join(self.backend.keys(key)).encode("utf-8")
            chunk_key = ChunkKey.parse(key)
            if opcode == OP_STORE:
                self.backend.put(chunk_key, value or b"")
                logger.debug("Stored %s (%s bytes)", key, len(value or b""))
                return STATUS_OK, b""
            if opcode == OP_GET:
                data = self.backend.get(chunk_key)
                if data is None:
                    return STATUS_NOT_FOUND, b""
                return STATUS_OK, data
        except StoreError as exc:
            return STATUS_ERROR, str(exc).encode("utf-8")
        except OSError as exc:
            logger.error("❌ Storage failure for %s: %s", key, exc)
            return STATUS_ERROR, f"storage failure: {exc}".encode()
        return STATUS_ERROR, f"unknown opcode {opcode:#04x}".encode()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="kvstore_server", daemon=True)
        thread.start()
        self._thread = thread
        logger.info("🚀 KV store listening on %s:%s (root %s)", *self.address, self.backend.root)
        return thread

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def serve(
    root: str | Path | None = None, host: str | None = None, port: int | None = None
) -> None:
    with KVStoreServer(root, host, port) as server:
        host_name, port_number = server.address
        root_dir = server.backend.root
        logger.info("🚀 KV store listening on %s:%s (root %s)", host_name, port_number, root_dir)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            logger.info("KV store shutting down")
