"""
Entropy coding primitives for NLLC

- FreqTable / build_freq_table / freq_table_from_counts: 16-bit integer tables
- AdaptiveModel: count-based adaptive table for small alphabets
- RangeEncoder / RangeDecoder: carry-less 32-bit range coder
"""

from .freq_table import (
    FREQ_BITS,
    FREQ_TOTAL,
    FreqTable,
    build_freq_table,
    freq_table_from_counts,
    uniform_freq_table,
    AdaptiveModel,
)
from .range_coder import (
    BitSink,
    BitSource,
    RangeEncoder,
    RangeDecoder,
    encode_symbol,
    decode_symbol,
)

__all__ = [
    "FREQ_BITS",
    "FREQ_TOTAL",
    "FreqTable",
    "build_freq_table",
    "freq_table_from_counts",
    "uniform_freq_table",
    "AdaptiveModel",
    "BitSink",
    "BitSource",
    "RangeEncoder",
    "RangeDecoder",
    "encode_symbol",
    "decode_symbol",
]
