"""
Test functions on partitions.

Every functional has a scalar evaluation on a Partition and a vectorized
evaluation on a batch of partitions stored as rows of a matrix, each row
sorted descending and zero-padded. Functionals are plain picklable objects so
they can be shipped to worker processes.
"""
import math
import re
from typing import List, Sequence, Tuple

import numpy as np

from core.errors import PartitionError
from core.partition import Partition, n_polynomial, threshold_count, z_moment


class Functional:
    """Base class; subclasses implement value() and batch()"""

    name: str = "functional"
    # 0 for symmetric functionals, m for functionals of the m largest parts
    order_depth: int = 0

    def value(self, p: Partition) -> float:
        raise NotImplementedError

    def batch(self, rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def split_breakpoints(self, part: float) -> Tuple[float, ...]:
        """Split fractions of a part where this functional jumps or kinks"""
        return ()

    def __call__(self, p: Partition) -> float:
        return self.value(p)

    def __mul__(self, other: "Functional") -> "Functional":
        return Product(self, other)

    def __repr__(self) -> str:
        return f"<Functional {self.name}>"


class ZMoment(Functional):
    """Z_j = sum of p_i^j"""

    def __init__(self, j: int):
        if j < 1:
            raise PartitionError(f"Z_j needs j >= 1, got {j}")
        self.j = j
        self.name = f"Z{j}"

    def value(self, p: Partition) -> float:
        return z_moment(p, self.j)

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return (rows ** self.j).sum(axis=1)


class NPolynomial(Functional):
    """P_n = prod of Z_j^{n_j} for n = (n_2, ..., n_d)"""

    def __init__(self, n: Sequence[int]):
        n = tuple(int(m) for m in n)
        n_polynomial(Partition.single(), n)
        self.n = n
        self.name = "P" + ",".join(str(m) for m in n)

    def value(self, p: Partition) -> float:
        return n_polynomial(p, self.n)

    def batch(self, rows: np.ndarray) -> np.ndarray:
        out = np.ones(rows.shape[0])
        for offset, power in enumerate(self.n):
            if power:
                out *= (rows ** (offset + 2)).sum(axis=1) ** power
        return out


class TopProduct(Functional):
    """p_1 * ... * p_m; m = 1 is the largest part"""

    def __init__(self, m: int):
        if m < 1:
            raise PartitionError(f"Top product needs m >= 1, got {m}")
        self.m = m
        self.order_depth = m
        self.name = "".join(f"p{i + 1}" for i in range(m))

    def value(self, p: Partition) -> float:
        parts = p.parts
        if len(parts) < self.m:
            return 0.0
        return math.prod(parts[: self.m])

    def batch(self, rows: np.ndarray) -> np.ndarray:
        if rows.shape[1] < self.m:
            return np.zeros(rows.shape[0])
        return rows[:, : self.m].prod(axis=1)


class PartCount(Functional):
    """Number of positive parts X_0"""
    name = "X0"

    def value(self, p: Partition) -> float:
        return float(p.count)

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return (rows > 0.0).sum(axis=1).astype(float)


class ThresholdCount(Functional):
    """Number of parts larger than eps"""

    def __init__(self, eps: float):
        if eps < 0.0:
            raise PartitionError(f"Threshold must be >= 0, got {eps}")
        self.eps = eps
        self.name = f"X{eps:g}"

    def value(self, p: Partition) -> float:
        return float(threshold_count(p, self.eps))

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return (rows > self.eps).sum(axis=1).astype(float)

    def split_breakpoints(self, part: float) -> Tuple[float, ...]:
        if part <= self.eps:
            return ()
        r = self.eps / part
        return (r, 1.0 - r)


class ThresholdMass(Functional):
    """Mass carried by parts larger than eps"""

    def __init__(self, eps: float):
        if eps < 0.0:
            raise PartitionError(f"Threshold must be >= 0, got {eps}")
        self.eps = eps
        self.name = f"M{eps:g}"

    def value(self, p: Partition) -> float:
        return math.fsum(x for x in p.parts if x > self.eps)

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return np.where(rows > self.eps, rows, 0.0).sum(axis=1)

    def split_breakpoints(self, part: float) -> Tuple[float, ...]:
        if part <= self.eps:
            return ()
        r = self.eps / part
        return (r, 1.0 - r)


class TotalMass(Functional):
    name = "mass"

    def value(self, p: Partition) -> float:
        return p.mass

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return rows.sum(axis=1)


class Constant(Functional):

    def __init__(self, c: float = 1.0):
        self.c = float(c)
        self.name = f"const{self.c:g}"

    def value(self, p: Partition) -> float:
        return self.c

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return np.full(rows.shape[0], self.c)


class Product(Functional):

    def __init__(self, left: Functional, right: Functional):
        self.left = left
        self.right = right
        self.order_depth = max(left.order_depth, right.order_depth)
        self.name = f"{left.name}*{right.name}"

    def value(self, p: Partition) -> float:
        return self.left.value(p) * self.right.value(p)

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return self.left.batch(rows) * self.right.batch(rows)

    def split_breakpoints(self, part: float) -> Tuple[float, ...]:
        return self.left.split_breakpoints(part) + self.right.split_breakpoints(part)


class Power(Functional):

    def __init__(self, base: Functional, k: int):
        self.base = base
        self.k = int(k)
        self.order_depth = base.order_depth
        self.name = f"{base.name}^{self.k}"

    def value(self, p: Partition) -> float:
        return self.base.value(p) ** self.k

    def batch(self, rows: np.ndarray) -> np.ndarray:
        return self.base.batch(rows) ** self.k

    def split_breakpoints(self, part: float) -> Tuple[float, ...]:
        return self.base.split_breakpoints(part)


_TOP_PATTERN = re.compile(r"^(p\d+)+$")


def parse_functional(text: str) -> Functional:
    """
    Parse a functional name: Z2, Z3^2, p1, p1p2, X0, X0.1, M0.1, P:2,1, mass, one.
    """
    text = text.strip()
    base, _, exponent = text.partition("^")
    if base.startswith("P:"):
        func: Functional = NPolynomial([int(m) for m in base[2:].split(",")])
    elif base.startswith("Z") and base[1:].isdigit():
        func = ZMoment(int(base[1:]))
    elif _TOP_PATTERN.match(base):
        indices = [int(i) for i in re.findall(r"\d+", base)]
        if indices != list(range(1, len(indices) + 1)):
            raise PartitionError(f"Top products must read p1p2...pm, got {base!r}")
        func = TopProduct(len(indices))
    elif base == "X0":
        func = PartCount()
    elif base.startswith("X"):
        func = ThresholdCount(float(base[1:]))
    elif base.startswith("M"):
        func = ThresholdMass(float(base[1:]))
    elif base == "mass":
        func = TotalMass()
    elif base == "one":
        func = Constant(1.0)
    else:
        raise PartitionError(f"Unknown functional {text!r}")
    if exponent:
        func = Power(func, int(exponent))
    return func


def parse_functionals(names: Sequence[str]) -> List[Functional]:
    return [parse_functional(name) for name in names]
