from .client import KVStoreClient
from .protocol import ChunkKey
from .server import FilesystemBackend, KVStoreServer, serve

__all__ = ["ChunkKey", "FilesystemBackend", "KVStoreClient", "KVStoreServer", "serve"]
