"""
Splitting measures on (0, 1/2]: tagged-JSON descriptions, sampling, CDFs,
split-fraction quadrature and the two integral criteria used to classify
the chain started from the single-part state.
"""
import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator
from scipy import special

from config import settings
from core.errors import QuadratureError, SigmaSpecError
from core.quadrature import dyadic_integral, interval_rule

logger = logging.getLogger(__name__)

HALF = 0.5
_MASS_TOL = 1e-12


class _SigmaBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def cdf(self, x: float) -> float:
        """sigma((0, x])"""
        raise NotImplementedError

    def cdf_left(self, x: float) -> float:
        """sigma((0, x))"""
        return self.cdf(x)

    def quantile(self, s: float) -> float:
        """Inverse CDF on (0, 1]"""
        raise NotImplementedError

    def density(self, x: float) -> float:
        raise NotImplementedError

    def knots(self) -> Tuple[float, ...]:
        """Interior CDF levels where the quantile function has kinks"""
        return ()

    def is_atomic(self) -> bool:
        return False


class UniformSigma(_SigmaBase):
    """Uniform law on (0, 1/2]"""
    type: Literal["uniform"] = "uniform"

    def cdf(self, x: float) -> float:
        return min(max(2.0 * x, 0.0), 1.0)

    def quantile(self, s: float) -> float:
        return HALF * s

    def density(self, x: float) -> float:
        return 2.0 if 0.0 < x <= HALF else 0.0


class PowerLawSigma(_SigmaBase):
    """Density a * 2^a * x^(a-1) on (0, 1/2], CDF (2x)^a"""
    type: Literal["power_law"] = "power_law"
    a: float = Field(gt=0.0)

    def cdf(self, x: float) -> float:
        if x <= 0.0:
            return 0.0
        if x >= HALF:
            return 1.0
        return (2.0 * x) ** self.a

    def quantile(self, s: float) -> float:
        return HALF * s ** (1.0 / self.a)

    def density(self, x: float) -> float:
        if not 0.0 < x <= HALF:
            return 0.0
        return self.a * 2.0 ** self.a * x ** (self.a - 1.0)


class AtomicSigma(_SigmaBase):
    """Finite mixture of point masses"""
    type: Literal["atomic"] = "atomic"
    atoms: List[Tuple[float, float]]

    @field_validator("atoms")
    @classmethod
    def _check_atoms(cls, atoms: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if not atoms:
            raise ValueError("at least one atom is required")
        for loc, weight in atoms:
            if not 0.0 < loc <= HALF:
                raise ValueError(f"atom location {loc} outside (0, 1/2]")
            if weight <= 0.0:
                raise ValueError(f"atom weight {weight} must be positive")
        total = math.fsum(w for _, w in atoms)
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"atom weights sum to {total}, expected 1")
        return sorted(atoms)

    def is_atomic(self) -> bool:
        return True

    def cdf(self, x: float) -> float:
        return math.fsum(w for loc, w in self.atoms if loc <= x)

    def cdf_left(self, x: float) -> float:
        return math.fsum(w for loc, w in self.atoms if loc < x)

    def quantile(self, s: float) -> float:
        acc = 0.0
        for loc, w in self.atoms:
            acc += w
            if s <= acc:
                return loc
        return self.atoms[-1][0]

    def density(self, x: float) -> float:
        raise SigmaSpecError("Atomic splitting measures have no density")


class TabulatedSigma(_SigmaBase):
    """
    Absolutely continuous law given by a piecewise-linear inverse CDF:
    quantile(probabilities[k]) = quantiles[k].
    """
    type: Literal["tabulated"] = "tabulated"
    probabilities: List[float]
    quantiles: List[float]

    @model_validator(mode="after")
    def _check_table(self) -> "TabulatedSigma":
        s, q = self.probabilities, self.quantiles
        if len(s) != len(q) or len(s) < 2:
            raise ValueError("probabilities and quantiles need equal length >= 2")
        if any(b <= a for a, b in zip(s[:-1], s[1:])):
            raise ValueError("probabilities must be strictly increasing")
        if any(b <= a for a, b in zip(q[:-1], q[1:])):
            raise ValueError("quantiles must be strictly increasing")
        if q[0] < 0.0 or q[-1] > HALF:
            raise ValueError("quantiles must lie in [0, 1/2]")
        if abs(s[0]) > _MASS_TOL or abs(s[-1] - 1.0) > _MASS_TOL:
            raise ValueError("probabilities must run from 0 to 1")
        return self

    def cdf(self, x: float) -> float:
        return float(np.interp(x, self.quantiles, self.probabilities, left=0.0, right=1.0))

    def quantile(self, s: float) -> float:
        return float(np.interp(s, self.probabilities, self.quantiles))

    def density(self, x: float) -> float:
        q = self.quantiles
        if not q[0] < x <= q[-1]:
            return 0.0
        k = int(np.searchsorted(q, x)) - 1
        k = min(max(k, 0), len(q) - 2)
        return (self.probabilities[k + 1] - self.probabilities[k]) / (q[k + 1] - q[k])

    def knots(self) -> Tuple[float, ...]:
        return tuple(self.probabilities[1:-1])


SigmaSpec = Annotated[
    Union[UniformSigma, PowerLawSigma, AtomicSigma, TabulatedSigma],
    Field(discriminator="type"),
]

_SIGMA_ADAPTER = TypeAdapter(SigmaSpec)


def parse_sigma(data: Union[str, Dict[str, Any]]) -> SigmaSpec:
    """
    Parse a tagged-JSON splitting measure.

    Raises:
        SigmaSpecError: naming the offending field
    """
    try:
        if isinstance(data, str):
            return _SIGMA_ADAPTER.validate_json(data)
        return _SIGMA_ADAPTER.validate_python(data)
    except ValidationError as e:
        first = e.errors()[0]
        field_name = ".".join(str(part) for part in first.get("loc", ())) or "type"
        raise SigmaSpecError(f"Invalid sigma spec field '{field_name}': {first.get('msg')}") from e


def sigma_tag(spec: SigmaSpec) -> str:
    """Short tag used in output file names"""
    if isinstance(spec, UniformSigma):
        return "uniform"
    if isinstance(spec, PowerLawSigma):
        return f"pow{spec.a:g}"
    if isinstance(spec, AtomicSigma):
        if len(spec.atoms) == 1:
            return f"delta{spec.atoms[0][0]:g}"
        return f"atomic{len(spec.atoms)}"
    return f"tab{len(spec.quantiles)}"


# ==================== Sampling and distribution ====================

def sample_sigma(spec: SigmaSpec, rng: np.random.Generator) -> float:
    """One split fraction in (0, 1/2]"""
    if isinstance(spec, UniformSigma):
        return HALF * (1.0 - rng.random())
    if isinstance(spec, AtomicSigma) and len(spec.atoms) == 1:
        return spec.atoms[0][0]
    u = sigma_quantile(spec, 1.0 - rng.random())
    if u <= 0.0:
        # only reachable for tables starting at 0 with s in the first ulp
        u = math.ulp(0.0)
    return u


def sigma_cdf(spec: SigmaSpec, x: float) -> float:
    return spec.cdf(x)


def sigma_cdf_left(spec: SigmaSpec, x: float) -> float:
    return spec.cdf_left(x)


def sigma_quantile(spec: SigmaSpec, s: float) -> float:
    return spec.quantile(s)


def split_quadrature(
    spec: SigmaSpec,
    nodes: int,
    breakpoints: Sequence[float] = ()
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split fractions and weights with sum(w * g(u)) ~ integral of g d(sigma).

    Atomic measures are summed exactly. Power laws with a >= 2 are integrated
    against their density in the fraction itself. Other continuous measures are
    integrated in the CDF variable, composite over the given fraction
    breakpoints and the measure's own kinks.

    Args:
        spec: Splitting measure
        nodes: Gauss-Legendre nodes per panel
        breakpoints: Fractions in (0, 1/2) where the integrand is not smooth
    """
    if isinstance(spec, AtomicSigma):
        locs = np.array([loc for loc, _ in spec.atoms])
        weights = np.array([w for _, w in spec.atoms])
        return locs, weights

    if isinstance(spec, PowerLawSigma) and spec.a >= 2.0:
        return _density_quadrature(spec, nodes, breakpoints)

    edges = {0.0, 1.0}
    edges.update(spec.knots())
    for b in breakpoints:
        if 0.0 < b < HALF:
            edges.add(sigma_cdf(spec, b))
    edges = sorted(edges)

    us, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0.0:
            continue
        s, w = interval_rule(lo, hi, nodes)
        us.append(_vector_quantile(spec, s))
        ws.append(w)
    return np.concatenate(us), np.concatenate(ws)


def _density_quadrature(
    spec: PowerLawSigma,
    nodes: int,
    breakpoints: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    # bounded density: integrate in the fraction itself, where it is a power of u
    edges = sorted({0.0, HALF, *(b for b in breakpoints if 0.0 < b < HALF)})
    us, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        u, w = interval_rule(lo, hi, nodes)
        us.append(u)
        ws.append(w * spec.a * 2.0 ** spec.a * u ** (spec.a - 1.0))
    return np.concatenate(us), np.concatenate(ws)


def _vector_quantile(spec: SigmaSpec, s: np.ndarray) -> np.ndarray:
    if isinstance(spec, UniformSigma):
        return HALF * s
    if isinstance(spec, PowerLawSigma):
        return HALF * s ** (1.0 / spec.a)
    return np.interp(s, spec.probabilities, spec.quantiles)


def split_moment(spec: SigmaSpec, k: int, nodes: Optional[int] = None) -> float:
    """
    Integral of t^k + (1-t)^k d(sigma)(t).

    Closed form for Uniform and PowerLaw, exact sum for Atomic, quadrature for
    Tabulated.
    """
    if k < 0:
        raise ValueError(f"Moment order must be >= 0, got {k}")
    if isinstance(spec, UniformSigma):
        return 2.0 / (k + 1)
    if isinstance(spec, PowerLawSigma):
        a = spec.a
        near = a * 2.0 ** (-k) / (a + k)
        far = a * 2.0 ** a * special.beta(a, k + 1) * special.betainc(a, k + 1, HALF)
        return float(near + far)
    if isinstance(spec, AtomicSigma):
        return math.fsum(w * (loc ** k + (1.0 - loc) ** k) for loc, w in spec.atoms)
    u, w = split_quadrature(spec, nodes or settings.quadrature.nodes)
    return float(np.dot(w, u ** k + (1.0 - u) ** k))


# ==================== Classification ====================

class SupportClass(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    UNKNOWN = "unknown"


class RecurrenceClass(str, Enum):
    POSITIVE_RECURRENT = "positive_recurrent"
    TRANSIENT = "transient"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ChainClassification:
    """Support and recurrence verdicts with the two integrals behind them"""
    support_class: SupportClass
    recurrence_class: RecurrenceClass
    integral_one_over_x: Optional[float]
    integral_inverse_cdf: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "support": self.support_class.value,
            "recurrence": self.recurrence_class.value,
            "I1": _extended(self.integral_one_over_x),
            "I2": _extended(self.integral_inverse_cdf),
        }


def _extended(value: Optional[float]) -> Union[float, str]:
    if value is None:
        return "unknown"
    if math.isinf(value):
        return "inf"
    return value


def _dyadic_or_unknown(func: Callable[[float], float], label: str) -> Optional[float]:
    try:
        return dyadic_integral(func)
    except QuadratureError as e:
        logger.warning(f"{label} left unknown: {e}")
        return None


def integral_one_over_x(spec: SigmaSpec, numeric: bool = False) -> Optional[float]:
    """
    Integral of 1/x d(sigma)(x); math.inf when divergent, None when unknown.

    Args:
        spec: Splitting measure
        numeric: Use dyadic-panel quadrature even where a closed form exists
    """
    if isinstance(spec, AtomicSigma):
        return math.fsum(w / loc for loc, w in spec.atoms)
    if not numeric:
        if isinstance(spec, UniformSigma):
            return math.inf
        if isinstance(spec, PowerLawSigma):
            return math.inf if spec.a <= 1.0 else 2.0 * spec.a / (spec.a - 1.0)
    return _dyadic_or_unknown(lambda x: spec.density(x) / x, "Integral of 1/x d(sigma)")


def integral_inverse_cdf(spec: SigmaSpec, numeric: bool = False) -> Optional[float]:
    """
    Integral over (0, 1/2] of 1 / sigma((0, x]) dx; math.inf when divergent,
    None when unknown.
    """
    if isinstance(spec, AtomicSigma):
        return math.inf
    if not numeric:
        if isinstance(spec, UniformSigma):
            return math.inf
        if isinstance(spec, PowerLawSigma):
            return 1.0 / (2.0 * (1.0 - spec.a)) if spec.a < 1.0 else math.inf

    def integrand(x: float) -> float:
        mass = sigma_cdf(spec, x)
        return math.inf if mass <= 0.0 else 1.0 / mass

    return _dyadic_or_unknown(integrand, "Integral of 1/sigma((0, x])")


def classify_integrals(i1: Optional[float], i2: Optional[float]) -> ChainClassification:
    """Pure decision rule on the two integrals"""
    if i1 is None:
        support = SupportClass.UNKNOWN
    elif math.isfinite(i1):
        support = SupportClass.FINITE
    else:
        support = SupportClass.INFINITE

    if i1 is not None and math.isfinite(i1):
        recurrence = RecurrenceClass.POSITIVE_RECURRENT
    elif i2 is not None and math.isfinite(i2):
        recurrence = RecurrenceClass.TRANSIENT
    else:
        recurrence = RecurrenceClass.UNKNOWN
    return ChainClassification(support, recurrence, i1, i2)


def classify(spec: SigmaSpec, numeric: bool = False) -> ChainClassification:
    """Classify the chain for a splitting measure; numeric=True skips the closed forms"""
    i1 = integral_one_over_x(spec, numeric)
    i2 = integral_inverse_cdf(spec, numeric)
    result = classify_integrals(i1, i2)
    logger.info(
        f"Classified {sigma_tag(spec)}: support={result.support_class.value}, "
        f"recurrence={result.recurrence_class.value}"
    )
    return result
