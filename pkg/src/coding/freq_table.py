"""
Integer frequency tables for the range coder

Every table sums to exactly 2^16 and gives every symbol a frequency of at
least 1, so any symbol remains codable whatever its modeled probability.
"""

from bisect import bisect_right
from typing import Dict, List, Sequence

import numpy as np

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS


class FreqTable:
    """Cumulative frequency table c[0..n] with c[0] = 0 and c[n] = 2^16"""

    __slots__ = ("freqs", "cum", "_cum_list")

    def __init__(self, freqs: Sequence[int]):
        freqs = np.asarray(freqs, dtype=np.int64)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ValueError("FreqTable needs a non-empty 1-D frequency vector")
        if np.any(freqs < 1):
            raise ValueError("every frequency must be >= 1")
        if int(freqs.sum()) != FREQ_TOTAL:
            raise ValueError(f"frequencies must sum to {FREQ_TOTAL}, got {int(freqs.sum())}")
        self.freqs = freqs
        self.cum = np.concatenate(([0], np.cumsum(freqs))).astype(np.int64)
        self._cum_list: List[int] = self.cum.tolist()

    def __len__(self) -> int:
        return int(self.freqs.size)

    @property
    def total(self) -> int:
        return FREQ_TOTAL

    def interval(self, index: int):
        """(cumulative start, frequency) of symbol `index`"""
        start = self._cum_list[index]
        return start, self._cum_list[index + 1] - start

    def find(self, target: int) -> int:
        """Index s with c[s] <= target < c[s+1]"""
        return bisect_right(self._cum_list, target) - 1

    def self_information_bits(self, index: int) -> float:
        return float(FREQ_BITS - np.log2(self.freqs[index]))


def _settle(freqs: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Round-robin the deficit or surplus to reach FREQ_TOTAL

    Each pass visits symbols in `order` adding (or removing) one unit per
    symbol; removal never takes a symbol below 1.
    """
    n = freqs.size
    diff = FREQ_TOTAL - int(freqs.sum())
    if diff == 0:
        return freqs

    freqs = freqs.copy()
    if diff > 0:
        full, extra = divmod(diff, n)
        freqs += full
        freqs[order[:extra]] += 1
        return freqs

    surplus = -diff
    avail = freqs[order] - 1
    # largest k whose k full passes remove no more than the surplus
    lo, hi = 0, int(avail.max())
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if int(np.minimum(avail, mid).sum()) <= surplus:
            lo = mid
        else:
            hi = mid - 1
    removed = np.minimum(avail, lo)
    rest = surplus - int(removed.sum())
    if rest:
        still = np.flatnonzero(avail > lo)[:rest]
        removed[still] += 1
    freqs[order] -= removed
    return freqs


def build_freq_table(mass: np.ndarray) -> FreqTable:
    """Quantize a probability vector into a FreqTable

    Args:
        mass: Non-negative probabilities summing to 1

    Returns:
        Table with f_i = max(1, floor(p_i * 2^16)) adjusted to sum to 2^16
    """
    mass = np.asarray(mass, dtype=np.float64)
    n = mass.size
    if n == 0:
        raise ValueError("cannot build a frequency table for an empty alphabet")
    if n > FREQ_TOTAL:
        raise ValueError(f"alphabet of {n} symbols exceeds {FREQ_TOTAL}")
    if not np.all(np.isfinite(mass)) or np.any(mass < 0):
        raise ValueError("probabilities must be finite and non-negative")

    freqs = np.maximum(1, np.floor(mass * FREQ_TOTAL).astype(np.int64))
    order = np.lexsort((np.arange(n), -mass))
    return FreqTable(_settle(freqs, order))


def freq_table_from_counts(counts: Sequence[int]) -> FreqTable:
    """Integer-only variant of build_freq_table for occurrence counts"""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.size
    if n == 0 or n > FREQ_TOTAL:
        raise ValueError(f"alphabet size must be in [1, {FREQ_TOTAL}], got {n}")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = int(counts.sum())
    if total == 0:
        return uniform_freq_table(n)
    freqs = np.maximum(1, (counts * FREQ_TOTAL) // total)
    order = np.lexsort((np.arange(n), -counts))
    return FreqTable(_settle(freqs, order))


_uniform_cache: Dict[int, FreqTable] = {}


def uniform_freq_table(n: int) -> FreqTable:
    table = _uniform_cache.get(n)
    if table is None:
        table = freq_table_from_counts(np.ones(n, dtype=np.int64))
        _uniform_cache[n] = table
    return table


class AdaptiveModel:
    """Adaptive frequency model: counts start at 1 and grow by `increment`

    Counts are halved once their sum passes `limit`. Encoder and decoder
    apply identical updates, so they always see the same table.
    """

    def __init__(self, num_symbols: int, increment: int = 24, limit: int = 1 << 13):
        self.counts = np.ones(num_symbols, dtype=np.int64)
        self.increment = increment
        self.limit = limit
        self._table = None

    @property
    def table(self) -> FreqTable:
        if self._table is None:
            self._table = freq_table_from_counts(self.counts)
        return self._table

    def update(self, index: int) -> None:
        self.counts[index] += self.increment
        if int(self.counts.sum()) > self.limit:
            self.counts = (self.counts + 1) // 2
        self._table = None
