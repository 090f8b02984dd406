"""
Discrete probability mass functions over integer symbols
"""

from dataclasses import dataclass

import numpy as np

RESIDUAL_MIN = -255
RESIDUAL_MAX = 255
RESIDUAL_SUPPORT = np.arange(RESIDUAL_MIN, RESIDUAL_MAX + 1, dtype=np.int64)

MASS_TOLERANCE = 1e-9


@dataclass(eq=False)
class Pmf:
    """Probability mass over ascending integer symbols"""
    symbols: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.symbols.shape != self.mass.shape or self.symbols.ndim != 1:
            raise ValueError(
                f"symbols and mass must be 1-D of equal length, got "
                f"{self.symbols.shape} and {self.mass.shape}"
            )
        if self.symbols.size > 1 and np.any(np.diff(self.symbols) <= 0):
            raise ValueError("Pmf symbols must be strictly ascending")

    def __len__(self) -> int:
        return int(self.symbols.size)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def is_normalized(self, tol: float = MASS_TOLERANCE) -> bool:
        return bool(np.all(self.mass >= 0.0)) and abs(self.total - 1.0) <= tol

    def index_of(self, symbol: int) -> int:
        idx = int(np.searchsorted(self.symbols, symbol))
        if idx >= self.symbols.size or self.symbols[idx] != symbol:
            raise ValueError(f"symbol {symbol} not in Pmf support")
        return idx

    def prob(self, symbol: int) -> float:
        return float(self.mass[self.index_of(symbol)])

    @classmethod
    def residual(cls, mass: np.ndarray) -> "Pmf":
        """Pmf over the full residual support [-255, 255]"""
        return cls(RESIDUAL_SUPPORT.copy(), mass)


def entropy_bits(p: Pmf) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0"""
    m = p.mass[p.mass > 0.0]
    return float(-(m * np.log2(m)).sum())
