"""Single-pass central moments with an exact pairwise merge."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MomentAccumulator:
    """Running count, mean and central sums M2, M3, M4.

    Batches are reduced with a two-pass formula and combined with the
    pairwise update of Pebay (2008), so merging partial accumulators in a
    fixed order reproduces the same floating-point result.
    """

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def from_values(cls, values) -> "MomentAccumulator":
        x = np.asarray(values, dtype=float).ravel()
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        d = x - mu
        d2 = d * d
        return cls(x.size, mu, float(d2.sum()), float((d2 * d).sum()), float((d2 * d2).sum()))

    def update(self, values) -> "MomentAccumulator":
        self.merge(MomentAccumulator.from_values(values))
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2, self.m3, self.m4 = other.n, other.mean, other.m2, other.m3, other.m4
            return self
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (self.m3 + other.m3 + delta * d_n * d_n * na * nb * (na - nb)
              + 3.0 * d_n * (na * other.m2 - nb * self.m2))
        m4 = (self.m4 + other.m4
              + delta * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
              + 6.0 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
              + 4.0 * d_n * (na * other.m3 - nb * self.m3))
        self.n, self.mean, self.m2, self.m3, self.m4 = n, self.mean + d_n * nb, m2, m3, m4
        return self

    @property
    def variance(self) -> float | None:
        """Unbiased sample variance; None for fewer than two values."""
        if self.n < 2:
            return None
        return max(self.m2, 0.0) / (self.n - 1)

    @property
    def stderr(self) -> float | None:
        v = self.variance
        return None if v is None else math.sqrt(v / self.n)

    @property
    def skewness(self) -> float | None:
        if self.n < 2 or self.m2 <= 0:
            return None
        return math.sqrt(self.n) * self.m3 / self.m2**1.5

    @property
    def excess_kurtosis(self) -> float | None:
        if self.n < 2 or self.m2 <= 0:
            return None
        return self.n * self.m4 / (self.m2 * self.m2) - 3.0

    def central_moment(self, k: int) -> float:
        return {2: self.m2, 3: self.m3, 4: self.m4}[k] / self.n
