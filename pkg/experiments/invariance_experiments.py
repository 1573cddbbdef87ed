"""
Monte Carlo checks under PD(theta): one-step invariance, reversibility,
expected-increment identities, correlation-density identities and
sampler cross-checks.
"""
import math
import time
import logging
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import settings
from core.errors import ConfigError
from core.functionals import Functional
from core.kernel import (
    KernelParams,
    increment_n_polynomial,
    increment_threshold_count,
    increment_threshold_mass,
    increment_z_moment,
    kernel_expectations,
)
from core.partition import Partition, z_moment
from core.poisson_dirichlet import (
    PDParams,
    correlation_moment,
    expected_z_moment,
    functional_equation_residual,
    marginalization_residual,
    sample_pd_poisson,
    sample_pd_stick,
    sample_size_biased_k,
)
from core.sigma import SigmaSpec, UniformSigma, split_moment
from experiments.accumulators import MomentAccumulator, merge_all
from experiments.reports import ExperimentReport, Rule, StatisticResult
from experiments.runner import run_replicas, split_budget
from experiments.streams import replica_rng

logger = logging.getLogger(__name__)

DEFAULT_CHUNKS = 16

# Per-sample statistic: partition -> vector of values
SampleStatistic = Callable[[Partition], np.ndarray]


def _pd_fields(pd: PDParams) -> Dict[str, object]:
    return pd.model_dump(mode="json", by_alias=True)


def _check_invariance_regime(pd: PDParams, params: KernelParams, sigma: SigmaSpec, control: bool) -> None:
    if control:
        return
    if not math.isclose(pd.theta, params.theta, rel_tol=1e-12):
        raise ConfigError(
            f"PD parameter theta={pd.theta} does not match beta_s/beta_m={params.theta}"
        )
    if not isinstance(sigma, UniformSigma):
        logger.warning("PD(theta) is only known to be invariant for the uniform splitting measure")


# ==================== Paired Monte Carlo over PD samples ====================

def _accumulate_chunk(
    chunk: Tuple[int, int],
    seed: int,
    pd: PDParams,
    statistic: SampleStatistic,
    width: int
) -> List[MomentAccumulator]:
    index, size = chunk
    rng = replica_rng(seed, index)
    accs = [MomentAccumulator() for _ in range(width)]
    for _ in range(size):
        values = statistic(sample_pd_stick(pd, rng))
        for acc, v in zip(accs, values):
            acc.add(float(v))
    return accs


def paired_monte_carlo(
    pd: PDParams,
    statistic: SampleStatistic,
    width: int,
    samples: int,
    seed: int,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> List[MomentAccumulator]:
    """
    Accumulate a vector statistic over PD(theta) samples. Samples are split
    into a fixed number of chunks with their own streams, so results do not
    depend on the worker count.
    """
    sizes = split_budget(samples, chunks)
    task = partial(_accumulate_chunk, seed=seed, pd=pd, statistic=statistic, width=width)
    per_chunk = run_replicas(task, list(enumerate(sizes)), workers)
    return [merge_all([accs[c] for accs in per_chunk]) for c in range(width)]


class _KernelDifference:
    """(Kf)(p) - f(p) for several functionals"""

    def __init__(self, functionals: Sequence[Functional], params: KernelParams, sigma: SigmaSpec, nodes: int):
        self.functionals = list(functionals)
        self.params = params
        self.sigma = sigma
        self.nodes = nodes

    def __call__(self, p: Partition) -> np.ndarray:
        after = kernel_expectations(p, self.functionals, self.params, self.sigma, self.nodes)
        before = np.array([f.value(p) for f in self.functionals])
        return np.concatenate([after - before, before])


class _ReversibilityDifference:
    """G(p) (KF)(p) - F(p) (KG)(p)"""

    def __init__(self, f: Functional, g: Functional, params: KernelParams, sigma: SigmaSpec, nodes: int):
        self.f, self.g = f, g
        self.params = params
        self.sigma = sigma
        self.nodes = nodes

    def __call__(self, p: Partition) -> np.ndarray:
        kf, kg = kernel_expectations(p, [self.f, self.g], self.params, self.sigma, self.nodes)
        return np.array([self.g.value(p) * kf - self.f.value(p) * kg])


class _Increments:

    def __init__(self, params: KernelParams, sigma: SigmaSpec, k_values: Sequence[int],
                 n_vectors: Sequence[Sequence[int]], nodes: int, thresholds: Sequence[float] = ()):
        self.params = params
        self.sigma = sigma
        self.k_values = list(k_values)
        self.n_vectors = [tuple(n) for n in n_vectors]
        self.nodes = nodes
        self.thresholds = list(thresholds)

    def __call__(self, p: Partition) -> np.ndarray:
        values = [increment_z_moment(p, self.params, self.sigma, k) for k in self.k_values]
        values += [increment_n_polynomial(p, self.params, self.sigma, n, self.nodes) for n in self.n_vectors]
        for eps in self.thresholds:
            values.append(increment_threshold_count(p, self.params, self.sigma, eps))
            values.append(increment_threshold_mass(p, self.params, self.sigma, eps, self.nodes))
        return np.array(values)


class _MomentSample:

    def __init__(self, j_values: Sequence[int]):
        self.j_values = list(j_values)

    def __call__(self, p: Partition) -> np.ndarray:
        return np.array([z_moment(p, j) for j in self.j_values])


class _ThetaBalance:
    """Merge gain and split loss of Z_k at unit rates"""

    def __init__(self, k: int):
        self.k = k

    def __call__(self, p: Partition) -> np.ndarray:
        parts = np.asarray(p.parts)
        powered = parts ** self.k
        change = np.add.outer(parts, parts) ** self.k - powered[:, None] - powered[None, :]
        np.fill_diagonal(change, 0.0)
        gain = float(np.sum(np.outer(parts, parts) * change))
        return np.array([gain, float(np.sum(parts ** (self.k + 2)))])


def _finish(report: ExperimentReport, started: float) -> ExperimentReport:
    report.wall_clock_seconds = time.perf_counter() - started
    report.finalize()
    logger.info(f"{report.name} verdict: {report.verdict.value}")
    return report


def _zero_statistic(name: str, acc: MomentAccumulator, provenance: str) -> StatisticResult:
    return StatisticResult(
        name=name, estimate=acc.mean, se=acc.standard_error, target=0.0, provenance=provenance,
    )


# ==================== Invariance, reversibility, increments ====================

def test_invariance_onestep(
    pd: PDParams,
    params: KernelParams,
    sigma: SigmaSpec,
    functionals: Sequence[Functional],
    samples: int,
    seed: int,
    control: bool = False,
    quadrature_nodes: Optional[int] = None,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """
    Paired estimate of E[(Kf)(p) - f(p)] for p ~ PD(theta).

    With control=True the run is a negative control: separation from zero
    is the expected outcome and the theta/sigma regime is not enforced.
    """
    logger.info("=== TEST-INVARIANCE ===")
    started = time.perf_counter()
    _check_invariance_regime(pd, params, sigma, control)
    nodes = quadrature_nodes or settings.quadrature.nodes

    statistic = _KernelDifference(functionals, params, sigma, nodes)
    accs = paired_monte_carlo(pd, statistic, 2 * len(functionals), samples, seed, chunks, workers)

    report = ExperimentReport(
        name="test-invariance",
        params={"pd": _pd_fields(pd), "beta_m": params.beta_m, "beta_s": params.beta_s,
                "sigma": sigma.model_dump(mode="json"), "functionals": [f.name for f in functionals],
                "samples": samples, "quadrature_nodes": nodes},
        seed=seed,
        replicas=chunks,
        expect_failure=control,
    )
    count = len(functionals)
    for f, diff, level in zip(functionals, accs[:count], accs[count:]):
        report.add(_zero_statistic(f"delta_{f.name}", diff, "one-step invariance of PD(theta)"))
        report.add(StatisticResult(name=f"mean_{f.name}", estimate=level.mean, se=level.standard_error,
                                   rule=Rule.DIAGNOSTIC))
    return _finish(report, started)


def test_reversibility(
    pd: PDParams,
    params: KernelParams,
    f: Functional,
    g: Functional,
    samples: int,
    seed: int,
    sigma: Optional[SigmaSpec] = None,
    quadrature_nodes: Optional[int] = None,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """Paired estimate of E[G KF - F KG] under PD(theta)"""
    logger.info("=== TEST-REVERSIBILITY ===")
    started = time.perf_counter()
    sigma = sigma or UniformSigma()
    _check_invariance_regime(pd, params, sigma, control=False)
    nodes = quadrature_nodes or settings.quadrature.nodes

    statistic = _ReversibilityDifference(f, g, params, sigma, nodes)
    (acc,) = paired_monte_carlo(pd, statistic, 1, samples, seed, chunks, workers)

    report = ExperimentReport(
        name="test-reversibility",
        params={"pd": _pd_fields(pd), "beta_m": params.beta_m, "beta_s": params.beta_s,
                "sigma": sigma.model_dump(mode="json"), "F": f.name, "G": g.name,
                "samples": samples, "quadrature_nodes": nodes},
        seed=seed,
        replicas=chunks,
    )
    report.add(_zero_statistic(f"GKF_minus_FKG[{f.name},{g.name}]", acc, "PD(theta) is reversing"))
    return _finish(report, started)


def test_increment_identities(
    pd: PDParams,
    params: KernelParams,
    sigma: SigmaSpec,
    k_values: Sequence[int],
    n_vectors: Sequence[Sequence[int]],
    samples: int,
    seed: int,
    quadrature_nodes: Optional[int] = None,
    thresholds: Sequence[float] = (),
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """
    Mean expected increments of Z_k, P_n and, per threshold eps, of the count
    and mass of parts above eps under PD(theta), each against 0.
    """
    logger.info("=== TEST-INCREMENTS ===")
    started = time.perf_counter()
    _check_invariance_regime(pd, params, sigma, control=False)
    nodes = quadrature_nodes or settings.quadrature.nodes

    statistic = _Increments(params, sigma, k_values, n_vectors, nodes, thresholds)
    width = len(k_values) + len(n_vectors) + 2 * len(thresholds)
    accs = paired_monte_carlo(pd, statistic, width, samples, seed, chunks, workers)

    report = ExperimentReport(
        name="test-increments",
        params={"pd": _pd_fields(pd), "beta_m": params.beta_m, "beta_s": params.beta_s,
                "sigma": sigma.model_dump(mode="json"), "k_values": list(k_values),
                "n_vectors": [list(n) for n in n_vectors], "thresholds": list(thresholds),
                "samples": samples},
        seed=seed,
        replicas=chunks,
    )
    names = [f"increment_Z{k}" for k in k_values] + [f"increment_P{','.join(map(str, n))}" for n in n_vectors]
    for eps in thresholds:
        names += [f"increment_N{eps:g}", f"increment_mass{eps:g}"]
    for name, acc in zip(names, accs):
        report.add(_zero_statistic(name, acc, "expected increments vanish under an invariant law"))
    return _finish(report, started)


# ==================== Moments and samplers ====================

def test_moment_identity(
    pd: PDParams,
    j_values: Sequence[int],
    samples: int,
    seed: int,
    quadrature_nodes: int = 64,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """E[Z_j] under PD(theta) against the quadrature of m_1(x) x^(j-1)"""
    logger.info("=== TEST-MOMENTS ===")
    started = time.perf_counter()
    accs = paired_monte_carlo(pd, _MomentSample(j_values), len(j_values), samples, seed, chunks, workers)

    report = ExperimentReport(
        name="test-moments",
        params={"pd": _pd_fields(pd), "j_values": list(j_values), "samples": samples},
        seed=seed,
        replicas=chunks,
    )
    for j, acc in zip(j_values, accs):
        target = correlation_moment(pd.theta, [j], quadrature_nodes)
        report.add(StatisticResult(
            name=f"E_Z{j}", estimate=acc.mean, se=acc.standard_error, target=target,
            provenance="quadrature of the one-point correlation density",
        ))
        report.add(StatisticResult(name=f"closed_form_Z{j}", estimate=expected_z_moment(pd.theta, j),
                                   rule=Rule.DIAGNOSTIC))
    return _finish(report, started)


def _size_biased_chunk(chunk: Tuple[int, int], seed: int, pd: PDParams) -> List[float]:
    index, size = chunk
    rng = replica_rng(seed, index)
    draws = []
    for _ in range(size):
        (x,) = sample_size_biased_k(sample_pd_stick(pd, rng), 1, rng)
        draws.append(x)
    return draws


def test_size_biased_uniformity(
    pd: PDParams,
    samples: int,
    seed: int,
    significance: float = 0.01,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """
    KS test of the size-biased part of a PD(theta) sample against the CDF
    1 - (1 - x)^theta (uniform for theta = 1).
    """
    logger.info("=== TEST-UNIFORMITY ===")
    started = time.perf_counter()
    task = partial(_size_biased_chunk, seed=seed, pd=pd)
    draws = [x for chunk in run_replicas(task, list(enumerate(split_budget(samples, chunks))), workers) for x in chunk]
    theta = pd.theta
    result = stats.kstest(draws, lambda x: 1.0 - (1.0 - np.clip(x, 0.0, 1.0)) ** theta)

    report = ExperimentReport(
        name="test-uniformity",
        params={"pd": _pd_fields(pd), "samples": samples, "significance": significance},
        seed=seed,
        replicas=chunks,
    )
    report.add(StatisticResult(name="ks_pvalue", estimate=float(result.pvalue), target=significance,
                               provenance="size-biased part has density m_1", rule=Rule.AT_LEAST))
    report.add(StatisticResult(name="ks_statistic", estimate=float(result.statistic), rule=Rule.DIAGNOSTIC))
    return _finish(report, started)


def _sampler_chunk(chunk: Tuple[int, int], seed: int, pd: PDParams) -> Tuple[np.ndarray, np.ndarray]:
    index, size = chunk
    stick_rng = replica_rng(seed, index, stream=0)
    poisson_rng = replica_rng(seed, index, stream=1)
    stick = np.empty((size, 3))
    poisson = np.empty((size, 3))
    for row in range(size):
        for out, p in ((stick, sample_pd_stick(pd, stick_rng)), (poisson, sample_pd_poisson(pd, poisson_rng))):
            out[row] = (p.largest, z_moment(p, 2), z_moment(p, 3))
    return stick, poisson


def test_sampler_agreement(
    pd: PDParams,
    samples: int,
    seed: int,
    significance: float = 0.01,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """Two-sample KS between stick-breaking and truncated-Poisson samples on p1, Z2, Z3"""
    logger.info("=== TEST-SAMPLERS ===")
    started = time.perf_counter()
    task = partial(_sampler_chunk, seed=seed, pd=pd)
    parts = run_replicas(task, list(enumerate(split_budget(samples, chunks))), workers)
    stick = np.concatenate([s for s, _ in parts])
    poisson = np.concatenate([q for _, q in parts])

    report = ExperimentReport(
        name="test-samplers",
        params={"pd": _pd_fields(pd), "samples": samples, "significance": significance},
        seed=seed,
        replicas=chunks,
    )
    for col, name in enumerate(("p1", "Z2", "Z3")):
        result = stats.ks_2samp(stick[:, col], poisson[:, col])
        report.add(StatisticResult(name=f"ks_pvalue_{name}", estimate=float(result.pvalue), target=significance,
                                   provenance="both constructions sample PD(theta)", rule=Rule.AT_LEAST))
    return _finish(report, started)


def estimate_theta(
    pd: PDParams,
    k: int,
    samples: int,
    seed: int,
    sigma: Optional[SigmaSpec] = None,
    chunks: int = DEFAULT_CHUNKS,
    workers: Optional[int] = None
) -> ExperimentReport:
    """
    Recover theta from PD(theta) samples through the balance of Z_k:
    theta = E[merge gain] / (E[Z_{k+2}] (1 - split moment)).
    """
    logger.info("=== ESTIMATE-THETA ===")
    started = time.perf_counter()
    if k < 2:
        raise ConfigError(f"The Z_k balance is trivial for k < 2, got {k}")
    sigma = sigma or UniformSigma()
    loss = 1.0 - split_moment(sigma, k)

    task = partial(_paired_samples_chunk, seed=seed, pd=pd, statistic=_ThetaBalance(k))
    rows = np.concatenate(run_replicas(task, list(enumerate(split_budget(samples, chunks))), workers))
    gain, moment = rows[:, 0], rows[:, 1]
    theta_hat = gain.mean() / (moment.mean() * loss)
    residual = gain - theta_hat * loss * moment
    se = float(np.std(residual, ddof=1) / math.sqrt(len(rows)) / (moment.mean() * loss))

    report = ExperimentReport(
        name="estimate-theta",
        params={"pd": _pd_fields(pd), "k": k, "sigma": sigma.model_dump(mode="json"), "samples": samples},
        seed=seed,
        replicas=chunks,
    )
    report.add(StatisticResult(name="theta_hat", estimate=float(theta_hat), se=se, target=pd.theta,
                               provenance="invariance of Z_k under the uniform splitting measure"))
    return _finish(report, started)


def _paired_samples_chunk(chunk: Tuple[int, int], seed: int, pd: PDParams, statistic: SampleStatistic) -> np.ndarray:
    index, size = chunk
    rng = replica_rng(seed, index)
    return np.array([statistic(sample_pd_stick(pd, rng)) for _ in range(size)]).reshape(size, -1)


# ==================== Correlation-density identities ====================

def random_simplex_point(rng: np.random.Generator, k: int) -> Tuple[float, ...]:
    """Uniform point of the open simplex in dimension k"""
    return tuple(float(v) for v in rng.dirichlet(np.ones(k + 1))[:k])


def check_mk(
    theta: float,
    k: int,
    points: int,
    seed: int,
    tolerance: float = 1e-6,
    quadrature_nodes: Optional[int] = None
) -> ExperimentReport:
    """
    Marginalization and functional-equation residuals of m_k at random
    points; the maximum absolute residual of each must stay within tolerance.
    """
    logger.info("=== CHECK-MK ===")
    started = time.perf_counter()
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    rng = replica_rng(seed, 0)
    marginal, balance = [], []
    for _ in range(points):
        x = random_simplex_point(rng, k)
        marginal.append(marginalization_residual(theta, k, x[: k - 1], quadrature_nodes))
        balance.append(functional_equation_residual(theta, k, x, quadrature_nodes))

    report = ExperimentReport(
        name="check-mk",
        params={"theta": theta, "k": k, "points": points, "tolerance": tolerance},
        seed=seed,
        replicas=points,
    )
    report.add(StatisticResult(name="max_marginalization_residual", estimate=max(abs(r) for r in marginal),
                               target=tolerance, provenance="marginal of m_k is (1-|x|) m_{k-1}",
                               rule=Rule.AT_MOST))
    report.add(StatisticResult(name="max_functional_equation_residual", estimate=max(abs(r) for r in balance),
                               target=tolerance, provenance="stationarity of the k-point density",
                               rule=Rule.AT_MOST))
    report.replica_rows = [
        {"replica": i, "seed": seed, "estimate": b, "marginal": m, "steps": 0}
        for i, (m, b) in enumerate(zip(marginal, balance))
    ]
    return _finish(report, started)
