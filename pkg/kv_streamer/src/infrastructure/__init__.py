from .kvt_file import read_kvt, write_kvt
from .library_store import load_library, save_library
from .model_file import load_model, save_model
from .trace_file import load_trace, save_trace

__all__ = [
    "load_library",
    "load_model",
    "load_trace",
    "read_kvt",
    "save_library",
    "save_model",
    "save_trace",
    "write_kvt",
]
