from __future__ import annotations

import logging
import socket
from types import TracebackType

from ...config.env import settings
from ...domain.errors import KeyNotFoundError, PayloadTooLargeError, StoreError
from .protocol import (
    MAX_PAYLOAD_BYTES,
    OP_GET,
    OP_LIST,
    OP_STORE,
    STATUS_NOT_FOUND,
    STATUS_OK,
    ChunkKey,
    encode_request,
    read_response,
)

logger = logging.getLogger(__name__)


class KVStoreClient:
    """One persistent connection to a store server; not safe to share between threads."""

    def __init__(
        self,
        host: str | None = None,
        port: int | None = None,
        *,
        timeout: float | None = None,
        max_value_bytes: int = MAX_PAYLOAD_BYTES,
    ) -> None:
        self.host = settings.store_host if host is None else host
        self.port = settings.store_port if port is None else port
        self.timeout = settings.socket_timeout_seconds if timeout is None else timeout
        self.max_value_bytes = min(max_value_bytes, MAX_PAYLOAD_BYTES)
        self._sock: socket.socket | None = None

    def __enter__(self) -> KVStoreClient:
        self.connect()
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()

    def connect(self) -> None:
        if self._sock is not None:
            return
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise StoreError(f"cannot connect to {self.host}:{self.port}: {exc}") from exc

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def _round_trip(self, request: bytes) -> tuple[int, bytes]:
        self.connect()
        assert self._sock is not None
        try:
            self._sock.sendall(request)
            status, payload = read_response(self._sock)
        except OSError as exc:
            self.close()
            raise StoreError(f"connection to {self.host}:{self.port} failed: {exc}") from exc
        if status not in (STATUS_OK, STATUS_NOT_FOUND):
            self.close()
            raise StoreError(payload.decode("utf-8", errors="replace") or "store error")
        return status, payload

    def store_kv(self, key: ChunkKey | str, data: bytes) -> None:
        if len(data) > self.max_value_bytes:
            raise PayloadTooLargeError(
                f"value of {len(data)} bytes exceeds the {self.max_value_bytes}-byte limit"
            )
        self._round_trip(encode_request(OP_STORE, str(key), data))

    def get_kv(self, key: ChunkKey | str) -> bytes:
        status, payload = self._round_trip(encode_request(OP_GET, str(key)))
        if status == STATUS_NOT_FOUND:
            raise KeyNotFoundError(f"key '{key}' not found")
        return payload

    def list_keys(self, prefix: str = "") -> list[str]:
        status, payload = self._round_trip(encode_request(OP_LIST, prefix))
        if status != STATUS_OK or not payload:
            return []
        return payload.decode("utf-8").split("\n")
