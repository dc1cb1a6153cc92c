"""Binary arithmetic coder with 32-bit state and per-symbol table switching.

Underflow (straddling the midpoint) is resolved with pending opposite bits,
which is the bit-level equivalent of carry propagation. Every symbol is coded
against the ``FrequencyTable`` its selector points at, so one stream can mix
anchor and delta tables of many (layer, channel) contexts.
"""

from __future__ import annotations

import bisect
from collections.abc import Sequence
from dataclasses import dataclass

from ..errors import ModelMismatchError, StreamExhaustedError

STATE_BITS = 32
FULL_RANGE = 1 << STATE_BITS
HALF_RANGE = FULL_RANGE >> 1
QUARTER_RANGE = HALF_RANGE >> 1
MINIMUM_RANGE = QUARTER_RANGE + 2
MAXIMUM_TOTAL = 1 << 30
STATE_MASK = FULL_RANGE - 1

LITERAL_BITS = 16
LITERAL_OFFSET = 1 << (LITERAL_BITS - 1)
LITERAL_TOTAL = 1 << LITERAL_BITS

# implicit zero bits the decoder may consume past the end of a stream
_MAX_OVERREAD_BITS = 2 * STATE_BITS


@dataclass(frozen=True)
class FrequencyTable:
    """Cumulative frequencies of one context.

    ``index = symbol + offset`` selects the slot. Symbols outside
    ``[0, n_slots)`` (excluding the escape slot) go through ``escape`` followed
    by a 16-bit literal; tables without an escape slot reject them.
    """

    cumulative: tuple[int, ...]
    offset: int
    escape: int | None = None

    def __post_init__(self) -> None:
        if len(self.cumulative) < 2 or self.cumulative[0] != 0:
            raise ModelMismatchError("cumulative table must start at 0 and cover >= 1 slot")
        if self.total > MAXIMUM_TOTAL:
            raise ModelMismatchError(f"table total {self.total} exceeds {MAXIMUM_TOTAL}")
        if any(b <= a for a, b in zip(self.cumulative, self.cumulative[1:], strict=False)):
            raise ModelMismatchError("every slot needs a frequency >= 1")

    @classmethod
    def from_frequencies(
        cls, freqs: Sequence[int], offset: int, escape: int | None = None
    ) -> FrequencyTable:
        cumulative = [0]
        for f in freqs:
            cumulative.append(cumulative[-1] + int(f))
        return cls(tuple(cumulative), offset, escape)

    @property
    def total(self) -> int:
        return self.cumulative[-1]

    @property
    def n_slots(self) -> int:
        return len(self.cumulative) - 1

    @property
    def coded_slots(self) -> int:
        return self.n_slots - (1 if self.escape is not None else 0)

    def slot_of(self, symbol: int) -> int | None:
        """Slot coding ``symbol`` directly, or None when it needs the escape path."""
        idx = symbol + self.offset
        if 0 <= idx < self.coded_slots:
            return idx
        return None


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_length: int

    def __len__(self) -> int:
        return len(self.data)


class _BitWriter:
    def __init__(self) -> None:
        self._buffer = bytearray()
        self._current = 0
        self._filled = 0
        self.bit_length = 0

    def write(self, bit: int) -> None:
        self._current = (self._current << 1) | bit
        self._filled += 1
        self.bit_length += 1
        if self._filled == 8:
            self._buffer.append(self._current)
            self._current = 0
            self._filled = 0

    def to_bitstream(self) -> Bitstream:
        data = bytearray(self._buffer)
        if self._filled:
            data.append(self._current << (8 - self._filled))
        return Bitstream(bytes(data), self.bit_length)


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._total_bits = len(data) * 8
        self._position = 0

    def read(self) -> int:
        pos = self._position
        self._position += 1
        if pos < self._total_bits:
            return (self._data[pos >> 3] >> (7 - (pos & 7))) & 1
        if pos - self._total_bits >= _MAX_OVERREAD_BITS:
            raise StreamExhaustedError(
                f"bitstream of {self._total_bits} bits exhausted while decoding"
            )
        return 0


class ArithmeticEncoder:
    def __init__(self) -> None:
        self._low = 0
        self._high = STATE_MASK
        self._pending = 0
        self._out = _BitWriter()

    def _narrow(self, sym_low: int, sym_high: int, total: int) -> None:
        span = self._high - self._low + 1
        self._high = self._low + sym_high * span // total - 1
        self._low = self._low + sym_low * span // total
        while ((self._low ^ self._high) & HALF_RANGE) == 0:
            bit = self._low >> (STATE_BITS - 1)
            self._out.write(bit)
            for _ in range(self._pending):
                self._out.write(bit ^ 1)
            self._pending = 0
            self._low = (self._low << 1) & STATE_MASK
            self._high = ((self._high << 1) & STATE_MASK) | 1
        while self._low & ~self._high & QUARTER_RANGE:
            self._pending += 1
            self._low = (self._low << 1) & (STATE_MASK >> 1)
            self._high = ((self._high << 1) & (STATE_MASK >> 1)) | HALF_RANGE | 1

    def encode(self, symbol: int, table: FrequencyTable) -> None:
        slot = table.slot_of(symbol)
        cum = table.cumulative
        if slot is not None:
            self._narrow(cum[slot], cum[slot + 1], cum[-1])
            return
        if table.escape is None:
            raise ModelMismatchError(f"symbol {symbol} is outside a table without escape")
        literal = symbol + LITERAL_OFFSET
        if not 0 <= literal < LITERAL_TOTAL:
            raise ModelMismatchError(f"symbol {symbol} does not fit a 16-bit literal")
        self._narrow(cum[table.escape], cum[table.escape + 1], cum[-1])
        self._narrow(literal, literal + 1, LITERAL_TOTAL)

    def finish(self) -> Bitstream:
        self._out.write(1)
        return self._out.to_bitstream()


class ArithmeticDecoder:
    def __init__(self, data: bytes) -> None:
        self._low = 0
        self._high = STATE_MASK
        self._in = _BitReader(data)
        self._code = 0
        for _ in range(STATE_BITS):
            self._code = (self._code << 1) | self._in.read()

    def _value(self, total: int) -> int:
        span = self._high - self._low + 1
        return ((self._code - self._low + 1) * total - 1) // span

    def _narrow(self, sym_low: int, sym_high: int, total: int) -> None:
        span = self._high - self._low + 1
        self._high = self._low + sym_high * span // total - 1
        self._low = self._low + sym_low * span // total
        while ((self._low ^ self._high) & HALF_RANGE) == 0:
            self._code = ((self._code << 1) & STATE_MASK) | self._in.read()
            self._low = (self._low << 1) & STATE_MASK
            self._high = ((self._high << 1) & STATE_MASK) | 1
        while self._low & ~self._high & QUARTER_RANGE:
            shifted = (self._code << 1) & (STATE_MASK >> 1)
            self._code = (self._code & HALF_RANGE) | shifted | self._in.read()
            self._low = (self._low << 1) & (STATE_MASK >> 1)
            self._high = ((self._high << 1) & (STATE_MASK >> 1)) | HALF_RANGE | 1

    def decode(self, table: FrequencyTable) -> int:
        cum = table.cumulative
        value = self._value(cum[-1])
        slot = bisect.bisect_right(cum, value) - 1
        if not 0 <= slot < table.n_slots:
            raise StreamExhaustedError("decoded value falls outside the frequency table")
        self._narrow(cum[slot], cum[slot + 1], cum[-1])
        if slot != table.escape:
            return slot - table.offset
        literal = self._value(LITERAL_TOTAL)
        if not 0 <= literal < LITERAL_TOTAL:
            raise StreamExhaustedError("escape literal falls outside the 16-bit range")
        self._narrow(literal, literal + 1, LITERAL_TOTAL)
        return literal - LITERAL_OFFSET


def _check_selectors(n_symbols: int, selectors: Sequence[int], n_tables: int) -> None:
    if len(selectors) != n_symbols:
        raise ModelMismatchError(
            f"{n_symbols} symbols but {len(selectors)} table selectors"
        )
    if n_symbols and (min(selectors) < 0 or max(selectors) >= n_tables):
        raise ModelMismatchError(f"table selector outside [0, {n_tables})")


def ac_encode(
    symbols: Sequence[int],
    selectors: Sequence[int],
    tables: Sequence[FrequencyTable],
) -> Bitstream:
    """Losslessly encode ``symbols[i]`` with ``tables[selectors[i]]``."""
    _check_selectors(len(symbols), selectors, len(tables))
    encoder = ArithmeticEncoder()
    for symbol, selector in zip(symbols, selectors, strict=True):
        encoder.encode(int(symbol), tables[selector])
    return encoder.finish()


def ac_decode(
    bits: Bitstream | bytes,
    selectors: Sequence[int],
    tables: Sequence[FrequencyTable],
    count: int | None = None,
) -> list[int]:
    data = bits.data if isinstance(bits, Bitstream) else bits
    n_symbols = len(selectors) if count is None else count
    _check_selectors(n_symbols, selectors, len(tables))
    decoder = ArithmeticDecoder(data)
    return [decoder.decode(tables[selector]) for selector in selectors]
