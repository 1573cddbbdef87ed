"""
Partitions of [0,1]: immutable sorted part vectors with merge/split operators,
norms, size-biased sampling and the symmetric statistics Z_j and P_n.
"""
import json
import math
import logging
from bisect import insort
from operator import neg
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from core.errors import PartitionError, PartitionUnderflowError

logger = logging.getLogger(__name__)


class AliasTable:
    """
    Vose alias table over part indices.

    Built once per partition when the part count exceeds the alias threshold.
    """

    __slots__ = ("_probabilities", "_alias", "_size")

    def __init__(self, weights: Sequence[float]):
        n = len(weights)
        total = math.fsum(weights)
        scaled = [w * n / total for w in weights]

        probabilities = [1.0] * n
        alias = list(range(n))
        small = [i for i, w in enumerate(scaled) if w < 1.0]
        large = [i for i, w in enumerate(scaled) if w >= 1.0]

        while small and large:
            lo = small.pop()
            hi = large.pop()
            probabilities[lo] = scaled[lo]
            alias[lo] = hi
            scaled[hi] = (scaled[lo] + scaled[hi]) - 1.0
            if scaled[hi] < 1.0:
                small.append(hi)
            else:
                large.append(hi)

        self._probabilities = probabilities
        self._alias = alias
        self._size = n

    def sample(self, rng: np.random.Generator) -> int:
        """Draw one index"""
        x = rng.random() * self._size
        i = min(int(x), self._size - 1)
        if x - i < self._probabilities[i]:
            return i
        return self._alias[i]


class Partition:
    """
    A finite nonincreasing sequence of positive part sizes with total mass <= 1.

    The infinite tail of zeros is implicit: zeros are never stored.
    """

    __slots__ = ("_parts", "_mass", "_alias")

    def __init__(self, parts: Iterable[float]):
        """
        Validate and sort a part vector.

        Args:
            parts: Part sizes in any order; exact zeros are dropped

        Raises:
            PartitionError: on negative, non-finite or empty input, or mass above 1
        """
        values = []
        for x in parts:
            x = float(x)
            if not math.isfinite(x) or x < 0.0:
                raise PartitionError(f"Part sizes must be finite and nonnegative, got {x!r}")
            if x > 0.0:
                values.append(x)
        if not values:
            raise PartitionError("A partition needs at least one positive part")

        values.sort(reverse=True)
        mass = math.fsum(values)
        if mass > 1.0 + settings.tolerances.struct_tol:
            raise PartitionError(f"Total mass {mass!r} exceeds 1")

        self._parts = tuple(values)
        self._mass = mass
        self._alias: Optional[AliasTable] = None

    @classmethod
    def _from_sorted(cls, parts: Tuple[float, ...]) -> "Partition":
        obj = cls.__new__(cls)
        obj._parts = parts
        obj._mass = math.fsum(parts)
        obj._alias = None
        return obj

    @classmethod
    def single(cls) -> "Partition":
        """The one-part state p-bar = (1, 0, 0, ...)"""
        return cls._from_sorted((1.0,))

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        """Parse a JSON array of part sizes"""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise PartitionError(f"Partition JSON is malformed: {e}") from e
        if not isinstance(data, list):
            raise PartitionError("Partition JSON must be an array of numbers")
        return cls(data)

    def to_json(self) -> str:
        return json.dumps(list(self._parts))

    def to_list(self) -> List[float]:
        return list(self._parts)

    # ==================== Accessors ====================

    @property
    def parts(self) -> Tuple[float, ...]:
        return self._parts

    @property
    def mass(self) -> float:
        """Total mass |p|"""
        return self._mass

    @property
    def count(self) -> int:
        """Number of positive parts X_0"""
        return len(self._parts)

    @property
    def smallest(self) -> float:
        """Smallest positive part q"""
        return self._parts[-1]

    @property
    def largest(self) -> float:
        return self._parts[0]

    def on_simplex(self) -> bool:
        return abs(self._mass - 1.0) <= settings.tolerances.simplex_tol

    def is_single(self) -> bool:
        """True for p-bar: one part carrying the whole unit mass"""
        return len(self._parts) == 1 and self.on_simplex()

    def __len__(self) -> int:
        return len(self._parts)

    def __getitem__(self, i: int) -> float:
        return self._parts[i]

    def __iter__(self):
        return iter(self._parts)

    def __repr__(self) -> str:
        return f"Partition({list(self._parts)!r})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self._parts == other._parts

    def __hash__(self) -> int:
        return hash(self._parts)

    def isclose(self, other: "Partition", tol: Optional[float] = None) -> bool:
        """Part-wise comparison within an absolute tolerance"""
        tol = settings.tolerances.struct_tol if tol is None else tol
        if len(self._parts) != len(other._parts):
            return False
        return all(abs(a - b) <= tol for a, b in zip(self._parts, other._parts))

    def padded(self, width: int) -> np.ndarray:
        """Parts as a zero-padded vector of the given width"""
        row = np.zeros(width)
        row[: len(self._parts)] = self._parts
        return row

    # ==================== Size-biased sampling ====================

    def size_biased_index(self, rng: np.random.Generator) -> int:
        """
        Draw index i with probability p_i / |p|.

        Linear scan over the sorted parts for small states, alias table above
        the configured threshold.
        """
        parts = self._parts
        n = len(parts)
        if n == 1:
            return 0
        if n > settings.alias_threshold:
            if self._alias is None:
                self._alias = AliasTable(parts)
            return self._alias.sample(rng)

        u = rng.random() * self._mass
        acc = 0.0
        for i, x in enumerate(parts):
            acc += x
            if u < acc:
                return i
        return n - 1


def _check_index(p: Partition, i: int) -> None:
    if not 0 <= i < len(p):
        raise PartitionError(f"Index {i} out of range for partition with {len(p)} parts")


def merge(p: Partition, i: int, j: int) -> Partition:
    """
    Merge parts i and j into one part, keeping the result sorted.

    Args:
        p: Partition
        i: First part index
        j: Second part index, distinct from i

    Returns:
        Partition with one fewer part
    """
    _check_index(p, i)
    _check_index(p, j)
    if i == j:
        raise PartitionError(f"Cannot merge part {i} with itself")

    parts = list(p.parts)
    merged = parts[i] + parts[j]
    for k in sorted((i, j), reverse=True):
        del parts[k]
    insort(parts, merged, key=neg)
    return Partition._from_sorted(tuple(parts))


def split(p: Partition, i: int, u: float) -> Partition:
    """
    Replace part i by u*p_i and (1-u)*p_i, keeping the result sorted.

    Args:
        p: Partition
        i: Part index
        u: Split fraction in (0, 1)

    Raises:
        PartitionUnderflowError: if either piece falls below the underflow floor
    """
    _check_index(p, i)
    if not 0.0 < u < 1.0:
        raise PartitionError(f"Split fraction must lie in (0, 1), got {u!r}")

    parts = list(p.parts)
    x = parts.pop(i)
    a = u * x
    b = x - a
    floor = settings.tolerances.underflow_floor
    if a < floor or b < floor:
        raise PartitionUnderflowError(f"Splitting part {x!r} at u={u!r} underflows")
    insort(parts, a, key=neg)
    insort(parts, b, key=neg)
    return Partition._from_sorted(tuple(parts))


def size_biased_pair(p: Partition, rng: np.random.Generator) -> Tuple[int, int]:
    """Two independent size-biased indices; they may coincide"""
    return p.size_biased_index(rng), p.size_biased_index(rng)


def z_moment(p: Partition, j: int) -> float:
    """Z_j(p) = sum of p_i^j"""
    if j < 1:
        raise PartitionError(f"Z_j needs j >= 1, got {j}")
    if j == 1:
        return p.mass
    if j == 2:
        return math.fsum(x * x for x in p.parts)
    return math.fsum(x ** j for x in p.parts)


def _check_multiplicity(n: Sequence[int]) -> None:
    if len(n) == 0:
        raise PartitionError("Multiplicity vector must not be empty")
    if any(int(m) != m or m < 0 for m in n):
        raise PartitionError(f"Multiplicities must be nonnegative integers, got {list(n)}")
    if n[-1] < 1:
        raise PartitionError(f"Last multiplicity must be >= 1, got {list(n)}")


def n_polynomial(p: Partition, n: Sequence[int]) -> float:
    """
    P_n(p) = prod over j of Z_j(p)^{n_j}, with n = (n_2, ..., n_d).
    """
    _check_multiplicity(n)
    value = 1.0
    for offset, power in enumerate(n):
        if power:
            value *= z_moment(p, offset + 2) ** power
    return value


def threshold_count(p: Partition, eps: float) -> int:
    """Number of parts strictly larger than eps"""
    return sum(1 for x in p.parts if x > eps)


def random_partition(rng: np.random.Generator, n_parts: int, mass: float = 1.0) -> Partition:
    """Random finite partition with the given number of parts, for tests and demos"""
    if n_parts < 1:
        raise PartitionError(f"Need at least one part, got {n_parts}")
    weights = rng.dirichlet(np.ones(n_parts))
    return Partition(weights * mass)
