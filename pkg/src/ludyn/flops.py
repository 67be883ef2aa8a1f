"""Floating-point operation tallies.

Counting rules: one FLOP per scalar multiply, add/subtract or divide; no
fused operations.  A dense ``m x k`` by ``k x n`` product costs ``m n k``
multiplies and ``m n (k - 1)`` adds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class FlopCount:
    mul: int = 0
    add: int = 0
    div: int = 0

    @property
    def total(self):
        return self.mul + self.add + self.div

    def tally(self, mul=0, add=0, div=0):
        self.mul += mul
        self.add += add
        self.div += div

    def matmul(self, m, k, n=1):
        self.mul += m * k * n
        self.add += m * n * (k - 1)

    def vadd(self, n):
        self.add += n

    def __add__(self, other):
        return FlopCount(self.mul + other.mul, self.add + other.add, self.div + other.div)

    def report(self):
        d = asdict(self)
        d["total"] = self.total
        return d


class NullCounter:
    """Drop-in counter that records nothing."""

    def tally(self, mul=0, add=0, div=0):
        pass

    def matmul(self, m, k, n=1):
        pass

    def vadd(self, n):
        pass


NULL = NullCounter()

# structured primitive costs
TRANSFORM_APPLY = dict(mul=24, add=18)   # E w, r x w, subtraction, E (.)
CROSS6 = dict(mul=18, add=12)            # spatial cross product of two 6-vectors


def flop_report(source):
    """``{mul, add, div, total}`` from a :class:`FlopCount` or anything carrying ``.flops``."""
    count = source if isinstance(source, FlopCount) else source.flops
    return count.report()
