from .coder import (
    ArithmeticDecoder,
    ArithmeticEncoder,
    Bitstream,
    FrequencyTable,
    ac_decode,
    ac_encode,
)
from .model import (
    SymbolKind,
    SymbolModel,
    SymbolTensor,
    cross_entropy_bits,
    global_table,
    grouped_entropy_bits,
    profile_model,
    table_cross_entropy_bits,
)

__all__ = [
    "ArithmeticDecoder",
    "ArithmeticEncoder",
    "Bitstream",
    "FrequencyTable",
    "SymbolKind",
    "SymbolModel",
    "SymbolTensor",
    "ac_decode",
    "ac_encode",
    "cross_entropy_bits",
    "global_table",
    "grouped_entropy_bits",
    "profile_model",
    "table_cross_entropy_bits",
]
