"""Length-prefixed request/response framing shared by the store server and client.

Request:  u8 opcode | u32 key length | key [| u32 value length | value]   (STORE only)
Response: u8 status | u32 payload length | payload

Integers are little-endian. LIST takes a key prefix and answers with the
matching keys joined by newlines.
"""

from __future__ import annotations

import re
import socket
import struct
from dataclasses import dataclass

from ...domain.errors import StoreError

OP_STORE = 0x01
OP_GET = 0x02
OP_LIST = 0x03
OPCODES = {OP_STORE, OP_GET, OP_LIST}

STATUS_OK = 0
STATUS_NOT_FOUND = 1
STATUS_ERROR = 2

MAX_PAYLOAD_BYTES = 2**31 - 1
MAX_KEY_BYTES = 4096

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")

_KEY_PATTERN = re.compile(r"ctx/([^/\s]+)/(\d+)/(L\d+|text)")


@dataclass(frozen=True)
class ChunkKey:
    """Address of one encoded chunk: ``ctx/<context_id>/<chunk_id>/<level>``.

    ``level`` is a level id, or None for the raw-text marker.
    """

    context_id: str
    chunk_id: int
    level: int | None

    def __post_init__(self) -> None:
        if not self.context_id or "/" in self.context_id or self.context_id in {".", ".."}:
            raise StoreError(f"invalid context id '{self.context_id}'")
        if any(ch.isspace() for ch in self.context_id):
            raise StoreError(f"invalid context id '{self.context_id}'")
        if self.chunk_id < 0:
            raise StoreError(f"chunk id must be >= 0, got {self.chunk_id}")
        if self.level is not None and self.level < 0:
            raise StoreError(f"level must be >= 0, got {self.level}")

    @property
    def level_label(self) -> str:
        return "text" if self.level is None else f"L{self.level}"

    def __str__(self) -> str:
        return f"ctx/{self.context_id}/{self.chunk_id}/{self.level_label}"

    @classmethod
    def parse(cls, raw: str) -> ChunkKey:
        match = _KEY_PATTERN.fullmatch(raw)
        if match is None:
            raise StoreError(f"malformed chunk key '{raw}'")
        context_id, chunk_id, level = match.groups()
        return cls(context_id, int(chunk_id), None if level == "text" else int(level[1:]))


@dataclass(frozen=True)
class Request:
    opcode: int
    key: str
    value: bytes | None = None


def recv_exact(sock: socket.socket, n: int) -> bytes:
    data = bytearray()
    while len(data) < n:
        piece = sock.recv(min(n - len(data), 1 << 20))
        if not piece:
            raise ConnectionError("socket closed")
        data.extend(piece)
    return bytes(data)


def encode_request(opcode: int, key: str, value: bytes | None = None) -> bytes:
    if opcode not in OPCODES:
        raise StoreError(f"unknown opcode {opcode:#04x}")
    key_bytes = key.encode("utf-8")
    if len(key_bytes) > MAX_KEY_BYTES:
        raise StoreError(f"key of {len(key_bytes)} bytes exceeds {MAX_KEY_BYTES}")
    parts = [_U8.pack(opcode), _U32.pack(len(key_bytes)), key_bytes]
    if opcode == OP_STORE:
        payload = value or b""
        if len(payload) > MAX_PAYLOAD_BYTES:
            raise StoreError(f"value of {len(payload)} bytes exceeds {MAX_PAYLOAD_BYTES}")
        parts += [_U32.pack(len(payload)), payload]
    return b"".join(parts)


class OversizeValueError(StoreError):
    """Request announced a value larger than the server accepts."""


def read_request(sock: socket.socket, max_value_bytes: int) -> Request | None:
    """Read one request, or None when the peer closed the connection cleanly."""
    first = sock.recv(1)
    if not first:
        return None
    (opcode,) = _U8.unpack(first)
    (key_length,) = _U32.unpack(recv_exact(sock, _U32.size))
    if opcode not in OPCODES:
        raise StoreError(f"unknown opcode {opcode:#04x}")
    if key_length > MAX_KEY_BYTES:
        raise StoreError(f"key of {key_length} bytes exceeds {MAX_KEY_BYTES}")
    key = recv_exact(sock, key_length).decode("utf-8", errors="strict")
    if opcode != OP_STORE:
        return Request(opcode, key)
    (value_length,) = _U32.unpack(recv_exact(sock, _U32.size))
    if value_length > max_value_bytes:
        _discard(sock, value_length)
        raise OversizeValueError(f"value of {value_length} bytes exceeds {max_value_bytes}")
    return Request(opcode, key, recv_exact(sock, value_length))


def _discard(sock: socket.socket, n: int) -> None:
    remaining = n
    while remaining:
        piece = sock.recv(min(remaining, 1 << 20))
        if not piece:
            raise ConnectionError("socket closed")
        remaining -= len(piece)


def encode_response(status: int, payload: bytes = b"") -> bytes:
    return _U8.pack(status) + _U32.pack(len(payload)) + payload


def read_response(sock: socket.socket) -> tuple[int, bytes]:
    status, length = struct.unpack("<BI", recv_exact(sock, 5))
    if status not in (STATUS_OK, STATUS_NOT_FOUND, STATUS_ERROR):
        raise StoreError(f"unknown response status {status}")
    return status, recv_exact(sock, length) if length else b""
