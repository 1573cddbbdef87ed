"""
The coagulation-fragmentation transition kernel: one-step sampling, exact
enumeration for atomic splitting measures, the kernel operator applied to
functionals, and closed-form expected increments.
"""
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import settings
from core.errors import OffSimplexWarning, PartitionError, SigmaSpecError
from core.functionals import Functional, NPolynomial
from core.partition import Partition, merge, n_polynomial, split, z_moment
from core.sigma import (
    AtomicSigma,
    SigmaSpec,
    sample_sigma,
    sigma_cdf,
    sigma_cdf_left,
    split_moment,
    split_quadrature,
)


class KernelParams(BaseModel):
    """Merge probability beta_m and split probability beta_s"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta_m: float = Field(gt=0.0, le=1.0)
    beta_s: float = Field(gt=0.0, le=1.0)

    @property
    def theta(self) -> float:
        return self.beta_s / self.beta_m


@dataclass
class TransitionTable:
    """Exact one-step law from a finite state"""
    origin: Partition
    outcomes: List[Tuple[Partition, float]] = field(default_factory=list)
    lazy_probability: float = 0.0

    def total(self) -> float:
        return math.fsum(prob for _, prob in self.outcomes) + self.lazy_probability

    def probability_of(self, target: Partition) -> float:
        """K(origin, {target}), including the lazy mass when target is the origin"""
        prob = math.fsum(q for outcome, q in self.outcomes if outcome.isclose(target))
        if self.origin.isclose(target):
            prob += self.lazy_probability
        return prob

    def expectation(self, f: Functional) -> float:
        return math.fsum(q * f.value(outcome) for outcome, q in self.outcomes) + \
            self.lazy_probability * f.value(self.origin)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "outcomes": [{"p": outcome.to_list(), "prob": prob} for outcome, prob in self.outcomes],
            "lazy": self.lazy_probability,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def lazy_probability(p: Partition, params: KernelParams) -> float:
    """1 - beta_m |p|^2 + (beta_m - beta_s) |p|_2^2"""
    value = 1.0 - params.beta_m * p.mass ** 2 + (params.beta_m - params.beta_s) * z_moment(p, 2)
    if -settings.tolerances.struct_tol < value < 0.0:
        return 0.0
    return value


# ==================== Sampling ====================

def step(
    p: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    rng: np.random.Generator
) -> Partition:
    """
    One transition: draw a size-biased pair; distinct indices merge with
    probability beta_m, equal indices split with probability beta_s using
    u ~ sigma; otherwise stay.

    Off the simplex the acceptance probabilities are scaled by |p|^2 so the
    outcome law follows the kernel weights p_i p_j.
    Such steps raise OffSimplexWarning, shown once per call site under the
    default warning filters.
    """
    if p.on_simplex():
        scale = 1.0
    else:
        scale = p.mass * p.mass
        warnings.warn("Stepping from a state off the simplex; off-simplex dynamics are experimental",
                      OffSimplexWarning, stacklevel=2)

    i = p.size_biased_index(rng)
    j = p.size_biased_index(rng)
    if i != j:
        if rng.random() < params.beta_m * scale:
            return merge(p, i, j)
        return p
    if rng.random() < params.beta_s * scale:
        return split(p, i, sample_sigma(sigma, rng))
    return p


# ==================== Exact enumeration ====================

def _require_atomic(sigma: SigmaSpec) -> AtomicSigma:
    if not isinstance(sigma, AtomicSigma):
        raise SigmaSpecError(f"Exact enumeration needs an atomic splitting measure, got '{sigma.type}'")
    return sigma


def _add_outcome(outcomes: List[Tuple[Partition, float]], target: Partition, prob: float) -> None:
    for k, (existing, q) in enumerate(outcomes):
        if existing.isclose(target):
            outcomes[k] = (existing, q + prob)
            return
    outcomes.append((target, prob))


def enumerate_transitions(p: Partition, params: KernelParams, sigma: SigmaSpec) -> TransitionTable:
    """
    All one-step outcomes from p with their probabilities.

    Merges (i, j) carry 2*beta_m*p_i*p_j, splits of part i at atom x carry
    beta_s*p_i^2*weight(x); outcomes equal part-wise within the structural
    tolerance are coalesced.
    """
    atomic = _require_atomic(sigma)
    parts = p.parts
    n = len(parts)
    outcomes: List[Tuple[Partition, float]] = []

    for i in range(n):
        for j in range(i + 1, n):
            _add_outcome(outcomes, merge(p, i, j), 2.0 * params.beta_m * parts[i] * parts[j])
    for i in range(n):
        for loc, weight in atomic.atoms:
            _add_outcome(outcomes, split(p, i, loc), params.beta_s * parts[i] ** 2 * weight)

    return TransitionTable(origin=p, outcomes=outcomes, lazy_probability=lazy_probability(p, params))


def transition_probability(s: Partition, t: Partition, params: KernelParams, sigma: SigmaSpec) -> float:
    """K(s, {t}) for atomic sigma"""
    return enumerate_transitions(s, params, sigma).probability_of(t)


def detailed_balance_gap(
    s: Partition,
    t: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    mu_s: float,
    mu_t: float
) -> float:
    """mu_s * K(s, {t}) - mu_t * K(t, {s})"""
    forward = transition_probability(s, t, params, sigma)
    backward = transition_probability(t, s, params, sigma)
    return mu_s * forward - mu_t * backward


# ==================== Kernel operator ====================

def _split_breakpoints(parts: np.ndarray, i: int, functionals: Sequence[Functional]) -> List[float]:
    depth = max(f.order_depth for f in functionals)
    points: List[float] = []
    x = parts[i]
    if depth > 0:
        others = np.delete(parts, i)[: depth + 1]
        for q in others:
            points.extend((q / x, 1.0 - q / x))
    for f in functionals:
        points.extend(f.split_breakpoints(x))
    return [b for b in points if 0.0 < b < 0.5]


def outcome_batch(
    p: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    functionals: Sequence[Functional],
    quadrature_nodes: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows of all merge outcomes and all split quadrature outcomes, with the
    kernel weight of each row. Rows are sorted descending and zero-padded.
    """
    nodes = quadrature_nodes or settings.quadrature.nodes
    parts = np.asarray(p.parts)
    n = parts.size
    width = n + 1
    blocks, weights = [], []

    if n >= 2:
        ii, jj = np.triu_indices(n, 1)
        rows = np.zeros((ii.size, width))
        rows[:, :n] = parts
        idx = np.arange(ii.size)
        rows[idx, ii] = parts[ii] + parts[jj]
        rows[idx, jj] = 0.0
        blocks.append(rows)
        weights.append(2.0 * params.beta_m * parts[ii] * parts[jj])

    for i in range(n):
        u, w = split_quadrature(sigma, nodes, _split_breakpoints(parts, i, functionals))
        rows = np.zeros((u.size, width))
        rows[:, :n] = parts
        piece = u * parts[i]
        rows[:, i] = piece
        rows[:, n] = parts[i] - piece
        blocks.append(rows)
        weights.append(params.beta_s * parts[i] ** 2 * w)

    rows = -np.sort(-np.concatenate(blocks), axis=1)
    return rows, np.concatenate(weights)


def kernel_expectations(
    p: Partition,
    functionals: Sequence[Functional],
    params: KernelParams,
    sigma: SigmaSpec,
    quadrature_nodes: Optional[int] = None
) -> np.ndarray:
    """(Kf)(p) for several functionals evaluated on one shared outcome batch"""
    rows, weights = outcome_batch(p, params, sigma, functionals, quadrature_nodes)
    stay = lazy_probability(p, params)
    return np.array([
        float(np.dot(weights, f.batch(rows))) + stay * f.value(p)
        for f in functionals
    ])


def apply_kernel(
    f: Functional,
    p: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    quadrature_nodes: Optional[int] = None
) -> float:
    """E[f(p(1)) | p(0) = p]"""
    return float(kernel_expectations(p, [f], params, sigma, quadrature_nodes)[0])


# ==================== Expected increments ====================

def increment_part_count(p: Partition, params: KernelParams) -> float:
    """Expected change of the part count: -beta_m |p|^2 + (beta_m + beta_s) |p|_2^2"""
    return -params.beta_m * p.mass ** 2 + (params.beta_m + params.beta_s) * z_moment(p, 2)


def increment_threshold_count(
    p: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    eps: float
) -> float:
    """
    Expected change of #{i : p_i > eps}.

    Merge, split and diagonal-correction terms are summed over ordered index
    pairs; sigma-masses come from the measure's CDF.
    """
    if eps < 0.0:
        raise PartitionError(f"Threshold must be >= 0, got {eps}")
    if eps == 0.0:
        return increment_part_count(p, params)

    parts = np.asarray(p.parts)
    small = parts <= eps
    big = ~small

    small_parts = parts[small]
    pair = np.add.outer(small_parts, small_parts) > eps
    created = float(np.sum(np.outer(small_parts, small_parts) * pair))
    lost = float(np.sum(parts[big])) ** 2
    merge_term = created - lost

    split_term = 0.0
    for x in parts[big]:
        r = eps / x
        upper = 1.0 - sigma_cdf(sigma, r)
        lower = 1.0 - sigma_cdf_left(sigma, 1.0 - r) if 1.0 - r <= 0.5 else 0.0
        split_term += x * x * (upper - lower)

    diagonal = float(np.sum(parts ** 2 * ((small & (2.0 * parts > eps)).astype(float) - big.astype(float))))

    return params.beta_m * merge_term + params.beta_s * split_term - params.beta_m * diagonal


def increment_threshold_mass(
    p: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    eps: float,
    quadrature_nodes: Optional[int] = None
) -> float:
    """Expected change of the mass carried by parts larger than eps"""
    if eps < 0.0:
        raise PartitionError(f"Threshold must be >= 0, got {eps}")
    parts = np.asarray(p.parts)
    carried = np.where(parts > eps, parts, 0.0)

    total = np.add.outer(parts, parts)
    gain = np.where(total > eps, total, 0.0) - carried[:, None] - carried[None, :]
    np.fill_diagonal(gain, 0.0)
    merge_term = float(np.sum(np.outer(parts, parts) * gain))

    nodes = quadrature_nodes or settings.quadrature.nodes
    split_term = 0.0
    for x in parts[parts > eps]:
        r = eps / x
        u, w = split_quadrature(sigma, nodes, (r, 1.0 - r))
        a, b = u * x, x - u * x
        lost = np.where(a <= eps, a, 0.0) + np.where(b <= eps, b, 0.0)
        split_term -= x * x * float(np.dot(w, lost))

    return params.beta_m * merge_term + params.beta_s * split_term


def increment_z_moment(p: Partition, params: KernelParams, sigma: SigmaSpec, k: int) -> float:
    """
    Expected change of Z_k:
    beta_m * sum_{i != j} p_i p_j ((p_i + p_j)^k - p_i^k - p_j^k)
    + beta_s * sum_i p_i^(2+k) (split moment - 1).
    """
    if k < 1:
        raise PartitionError(f"Z_k increments need k >= 1, got {k}")
    if k == 1:
        return 0.0
    parts = np.asarray(p.parts)
    powered = parts ** k
    change = np.add.outer(parts, parts) ** k - powered[:, None] - powered[None, :]
    np.fill_diagonal(change, 0.0)
    merge_term = float(np.sum(np.outer(parts, parts) * change))
    split_term = float(np.sum(parts ** (2 + k))) * (split_moment(sigma, k) - 1.0)
    return params.beta_m * merge_term + params.beta_s * split_term


def increment_n_polynomial(
    p: Partition,
    params: KernelParams,
    sigma: SigmaSpec,
    n: Sequence[int],
    quadrature_nodes: Optional[int] = None
) -> float:
    """(K P_n)(p) - P_n(p)"""
    poly = NPolynomial(n)
    return apply_kernel(poly, p, params, sigma, quadrature_nodes) - n_polynomial(p, poly.n)
