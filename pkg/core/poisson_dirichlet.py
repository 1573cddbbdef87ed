"""
Poisson-Dirichlet PD(theta): stick-breaking and truncated-Poisson samplers,
correlation densities m_k and the integral identities they satisfy.
"""
import math
import logging
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, special

from config import settings
from core.errors import PartitionError
from core.partition import Partition
from core.quadrature import endpoint_quad, fixed_quad, simplex_rule

logger = logging.getLogger(__name__)

_STICK_CHUNK = 32


class PDParams(BaseModel):
    """PD(theta) with sampler truncation settings"""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    theta: float = Field(gt=0.0)
    truncation: float = Field(default_factory=lambda: settings.pd_truncation, gt=0.0, lt=1.0)
    poisson_eps: float = Field(default_factory=lambda: settings.pd_poisson_eps, gt=0.0, lt=1.0, alias="eps")

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


# ==================== Samplers ====================

def sample_gem_sticks(params: PDParams, rng: np.random.Generator) -> np.ndarray:
    """
    Residual-allocation sticks in order of appearance:
    Y_{n+1} = B_{n+1} (1 - sum of previous Y), B ~ Beta(1, theta),
    stopping once the remaining mass falls below the truncation.
    """
    pieces = []
    remaining = 1.0
    while remaining >= params.truncation:
        b = rng.beta(1.0, params.theta, size=_STICK_CHUNK)
        after = remaining * np.cumprod(1.0 - b)
        before = np.concatenate(([remaining], after[:-1]))
        done = np.nonzero(after < params.truncation)[0]
        if done.size:
            stop = int(done[0]) + 1
            pieces.append(before[:stop] * b[:stop])
            break
        pieces.append(before * b)
        remaining = float(after[-1])
    return np.concatenate(pieces)


def sample_pd_stick(params: PDParams, rng: np.random.Generator) -> Partition:
    """PD(theta) sample by stick-breaking, sorted descending"""
    return Partition(sample_gem_sticks(params, rng))


def truncated_intensity_mass(theta: float, eps: float) -> float:
    """theta * integral over (eps, inf) of exp(-x)/x dx"""
    return theta * float(special.exp1(eps))


def truncated_intensity_mass_quadrature(theta: float, eps: float) -> float:
    """Same quantity by adaptive quadrature, used as an independent check"""
    # log substitution on (eps, 1]
    near, _ = integrate.quad(lambda t: math.exp(-math.exp(t)), math.log(eps), 0.0, epsabs=1e-14, epsrel=1e-13)
    far, _ = integrate.quad(lambda x: math.exp(-x) / x, 1.0, np.inf, epsabs=1e-14, epsrel=1e-13)
    return theta * (near + far)


@lru_cache(maxsize=16)
def _intensity_table(eps: float, knots: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverse-survival table of the law exp(-x)/x restricted to (eps, inf):
    returns (-log survival, log x) on log-spaced knots, both increasing.
    """
    x = np.geomspace(eps, 50.0, knots)
    survival = special.exp1(x) / special.exp1(eps)
    survival[0] = 1.0
    table = (-np.log(survival), np.log(x))
    for arr in table:
        arr.setflags(write=False)
    return table


def sample_truncated_intensity(params: PDParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. points from theta * exp(-x)/x dx conditioned to (eps, inf)"""
    neg_log_survival, log_x = _intensity_table(params.poisson_eps, settings.quadrature.table_knots)
    v = 1.0 - rng.random(size)
    return np.exp(np.interp(-np.log(v), neg_log_survival, log_x))


def sample_pd_poisson(params: PDParams, rng: np.random.Generator) -> Partition:
    """
    PD(theta) sample by normalizing a Poisson process with intensity
    theta * exp(-x)/x dx truncated below eps. Draws with no points are
    redrawn.
    """
    mean = truncated_intensity_mass(params.theta, params.poisson_eps)
    count = 0
    while count == 0:
        count = int(rng.poisson(mean))
    points = sample_truncated_intensity(params, count, rng)
    return Partition(points / math.fsum(points))


# ==================== Correlation densities ====================

def _check_point(x: Sequence[float]) -> float:
    if any(v < 0.0 for v in x):
        raise PartitionError(f"Coordinates must be nonnegative, got {list(x)}")
    total = math.fsum(x)
    if total >= 1.0:
        raise PartitionError(f"Coordinates must sum to less than 1, got {total}")
    return total


def density_mk(theta: float, x: Sequence[float]) -> float:
    """m_k(x) = theta^k (1 - |x|)^(theta - 1) with k = len(x); m_0 = 1"""
    total = _check_point(x)
    return theta ** len(x) * (1.0 - total) ** (theta - 1.0)


def _mk_values(theta: float, k: int, totals: np.ndarray) -> np.ndarray:
    return theta ** k * (1.0 - totals) ** (theta - 1.0)


def sample_size_biased_k(p: Partition, k: int, rng: np.random.Generator) -> Optional[Tuple[float, ...]]:
    """
    Size-bias k parts with replacement; the tuple of their sizes when all
    indices differ, otherwise None.
    """
    if k < 1:
        raise PartitionError(f"k must be >= 1, got {k}")
    indices = [p.size_biased_index(rng) for _ in range(k)]
    if len(set(indices)) < k:
        return None
    return tuple(p[i] for i in indices)


def moment_measure_mass(theta: float, k: int) -> float:
    """Total mass of the k-th moment measure: theta^k Gamma(theta) / Gamma(theta + k)"""
    return math.exp(k * math.log(theta) + special.gammaln(theta) - special.gammaln(theta + k))


def integrate_mk(theta: float, k: int, nodes: int = 32) -> float:
    """Nested quadrature of m_k over the open simplex"""
    points, weights = simplex_rule(k, theta, nodes)
    return float(np.dot(weights, _mk_values(theta, k, points.sum(axis=1))))


def correlation_moment(theta: float, exponents: Sequence[int], nodes: int = 32) -> float:
    """
    Integral of m_k(x) * prod x_l^(j_l - 1) over the simplex, k = len(exponents).

    Equals the expectation of sum over distinct index tuples of
    prod p_{i_l}^{j_l}; for k = 1 it is E[Z_j].
    """
    k = len(exponents)
    points, weights = simplex_rule(k, theta, nodes)
    values = _mk_values(theta, k, points.sum(axis=1))
    for col, j in enumerate(exponents):
        values = values * points[:, col] ** (j - 1)
    return float(np.dot(weights, values))


def expected_z_moment(theta: float, j: int) -> float:
    """E[Z_j] under PD(theta) = theta * B(j, theta)"""
    return theta * float(special.beta(j, theta))


# ==================== Integral identities ====================

def marginalization_residual(
    theta: float,
    k: int,
    x: Sequence[float],
    quadrature_nodes: Optional[int] = None
) -> float:
    """
    integral over x_1 in (0, 1) of m_k(x_1, x) minus (1 - |x|) m_{k-1}(x),
    with x of length k - 1.
    """
    if k < 1 or len(x) != k - 1:
        raise PartitionError(f"Need a point of dimension {k - 1}, got {len(x)}")
    nodes = quadrature_nodes or settings.quadrature.nodes
    rest = _check_point(x)
    room = 1.0 - rest
    integral = endpoint_quad(lambda z: _mk_values(theta, k, rest + z), 0.0, room, room, theta, nodes)
    return integral - room * density_mk(theta, x)


def functional_equation_residual(
    theta: float,
    k: int,
    x: Sequence[float],
    quadrature_nodes: Optional[int] = None,
    beta_m: float = 1.0
) -> float:
    """
    Balance of the k-point correlation density under one kernel step at
    beta_s / beta_m = theta, returned as (gains - losses) / beta_m.

    Gains: two parts merging into x_i; a larger part splitting off x_i
    (written through the marginalization identity); one split creating two
    of the coordinates at once. Losses: any coordinate merging or splitting.

    Args:
        theta: PD parameter
        k: Number of coordinates
        x: Point with distinct positive coordinates summing below 1
        quadrature_nodes: Gauss-Legendre nodes per integral
        beta_m: Merge probability; beta_s = theta * beta_m
    """
    if k < 1 or len(x) != k:
        raise PartitionError(f"Need a point of dimension {k}, got {len(x)}")
    if any(v <= 0.0 for v in x) or len(set(x)) < k:
        raise PartitionError(f"Coordinates must be positive and distinct, got {list(x)}")
    nodes = quadrature_nodes or settings.quadrature.nodes
    beta_s = theta * beta_m
    total = _check_point(x)

    frogs = cows = magrefa = united = pair_split = 0.0
    for i, xi in enumerate(x):
        others = [v for j, v in enumerate(x) if j != i]
        rest = math.fsum(others)
        frogs += xi * fixed_quad(lambda z: _mk_values(theta, k + 1, np.full_like(z, total)), 0.0, xi, nodes)
        cows += xi * endpoint_quad(lambda z: _mk_values(theta, k, rest + z), 0.0, xi, 1.0 - rest, theta, nodes)
        base = density_mk(theta, others)
        magrefa += xi * base
        united += xi * rest * base
        for j in range(i + 1, k):
            merged = [v for l, v in enumerate(x) if l not in (i, j)] + [xi + x[j]]
            pair_split += 2.0 * xi * x[j] * density_mk(theta, merged)

    lhs = beta_m * frogs - beta_s * cows + beta_s * magrefa - beta_s * united + beta_s * pair_split
    squares = math.fsum(v * v for v in x)
    rhs = (beta_m * total + (beta_s - beta_m) * squares) * density_mk(theta, x)
    return (lhs - rhs) / beta_m
