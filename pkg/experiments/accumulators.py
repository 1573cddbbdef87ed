"""
Streaming moment accumulators with deterministic merging
"""
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np


@dataclass
class MomentAccumulator:
    """Count, mean and sum of squared deviations (Welford update, Chan merge)"""
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def add_many(self, values: Iterable[float]) -> None:
        for x in values:
            self.add(float(x))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.count == 0:
            return MomentAccumulator(self.count, self.mean, self.m2)
        if self.count == 0:
            return MomentAccumulator(other.count, other.mean, other.m2)
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / count
        return MomentAccumulator(count, mean, m2)

    @property
    def variance(self) -> float:
        if self.count < 2:
            return math.nan
        return self.m2 / (self.count - 1)

    @property
    def standard_error(self) -> float:
        if self.count < 2:
            return math.nan
        return math.sqrt(self.variance / self.count)


def merge_all(accumulators: Sequence[MomentAccumulator]) -> MomentAccumulator:
    """Merge in the given order"""
    total = MomentAccumulator()
    for acc in accumulators:
        total = total.merge(acc)
    return total


def mean_and_se(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error across independent replicas"""
    acc = MomentAccumulator()
    acc.add_many(values)
    return acc.mean, acc.standard_error


class CompensatedSum:
    """Neumaier running sum"""

    __slots__ = ("total", "_carry")

    def __init__(self) -> None:
        self.total = 0.0
        self._carry = 0.0

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self._carry += (self.total - t) + x
        else:
            self._carry += (x - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self._carry


def window_median(values: np.ndarray, end: int) -> float:
    """Median over the window (end/2, end] of a 1-indexed trajectory record"""
    start = end // 2
    return float(np.median(values[start:end]))
