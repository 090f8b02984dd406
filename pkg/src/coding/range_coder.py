"""
Carry-less 32-bit range coder (Subbotin construction)

Renormalization emits one byte whenever the top byte of `low` is settled,
and forces the range down to a 2^16 boundary when it underflows while
straddling one. The encoder flushes 4 bytes; the decoder reads exactly as
many bytes as the encoder wrote.
"""

import logging

from ..errors import CorruptPayloadError, SourceExhaustedError
from .freq_table import FREQ_TOTAL, FreqTable

logger = logging.getLogger(__name__)

TOP = 1 << 24
BOT = 1 << 16
MASK32 = 0xFFFFFFFF


class BitSink:
    """Growable output byte buffer"""

    def __init__(self):
        self._buf = bytearray()

    def write_byte(self, value: int) -> None:
        self._buf.append(value & 0xFF)

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def __len__(self) -> int:
        return len(self._buf)


class BitSource:
    """Input byte buffer with a read position"""

    def __init__(self, data: bytes):
        self._data = bytes(data)
        self.position = 0

    def read_byte(self) -> int:
        if self.position >= len(self._data):
            raise SourceExhaustedError(
                f"range decoder read past end of {len(self._data)}-byte payload"
            )
        value = self._data[self.position]
        self.position += 1
        return value

    @property
    def remaining(self) -> int:
        return len(self._data) - self.position


class RangeEncoder:
    def __init__(self, sink: BitSink = None):
        self.sink = sink if sink is not None else BitSink()
        self.low = 0
        self.range = MASK32
        self.symbols_coded = 0

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = -self.low & (BOT - 1)
            else:
                break
            self.sink.write_byte(self.low >> 24)
            self.range = (self.range << 8) & MASK32
            self.low = (self.low << 8) & MASK32

    def encode(self, cum_freq: int, freq: int, total: int = FREQ_TOTAL) -> None:
        r = self.range // total
        self.low += cum_freq * r
        self.range = freq * r
        self.symbols_coded += 1
        self._normalize()

    def finish(self) -> bytes:
        for _ in range(4):
            self.sink.write_byte(self.low >> 24)
            self.low = (self.low << 8) & MASK32
        logger.debug(f"[CODER] {self.symbols_coded} symbols -> {len(self.sink)} bytes")
        return self.sink.getvalue()


class RangeDecoder:
    def __init__(self, source: BitSource):
        self.source = source
        self.low = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self.source.read_byte()

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = -self.low & (BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self.source.read_byte()) & MASK32
            self.range = (self.range << 8) & MASK32
            self.low = (self.low << 8) & MASK32

    def target(self, total: int = FREQ_TOTAL) -> int:
        """Cumulative frequency the next symbol falls on"""
        self.range //= total
        cum = ((self.code - self.low) & MASK32) // self.range
        if cum >= total:
            raise CorruptPayloadError(f"range decoder target {cum} outside table total {total}")
        return cum

    def consume(self, cum_freq: int, freq: int) -> None:
        self.low += cum_freq * self.range
        self.range *= freq
        self._normalize()


def encode_symbol(encoder: RangeEncoder, table: FreqTable, index: int) -> None:
    """Code symbol `index` of `table`"""
    if not 0 <= index < len(table):
        raise ValueError(f"symbol index {index} outside table of {len(table)} symbols")
    start, freq = table.interval(index)
    encoder.encode(start, freq, table.total)


def decode_symbol(decoder: RangeDecoder, table: FreqTable) -> int:
    """Decode one symbol index using `table`"""
    index = table.find(decoder.target(table.total))
    start, freq = table.interval(index)
    decoder.consume(start, freq)
    return index

