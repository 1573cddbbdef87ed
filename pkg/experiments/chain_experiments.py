"""
Chain experiments started from the single-part state: Cesaro averages,
return times and the part-count / smallest-part diagnostic.
"""
import math
import time
import logging
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from core.errors import PartitionUnderflowError
from core.functionals import Functional, ZMoment
from core.kernel import KernelParams, step
from core.partition import Partition, z_moment
from core.sigma import SigmaSpec, SupportClass, classify
from experiments.accumulators import CompensatedSum, mean_and_se, window_median
from experiments.reports import ExperimentReport, Rule, StatisticResult, TrajectoryStats
from experiments.runner import run_replicas, split_budget
from experiments.streams import replica_rng

logger = logging.getLogger(__name__)

# float slack for the martingale-corrected lower bound on Cesaro averages
_BOUND_SLACK = 1e-12


def _chain_params(params: KernelParams, sigma: SigmaSpec) -> Dict[str, object]:
    return {
        "beta_m": params.beta_m,
        "beta_s": params.beta_s,
        "theta": params.theta,
        "sigma": sigma.model_dump(mode="json"),
    }


# ==================== Cesaro averages ====================

def cesaro_trajectory(
    index: int,
    seed: int,
    params: KernelParams,
    sigma: SigmaSpec,
    steps: int,
    burn_in: int,
    stride: int,
    functionals: Sequence[Functional]
) -> TrajectoryStats:
    """
    Run one replica from p-bar and accumulate functionals over the steps
    k = burn_in, burn_in + stride, ... < steps.

    Along the way it tracks the largest deviation of the total mass from 1
    and checks, for every n, that the average of |p|_2^2 over the first n
    states corrected by the part-count martingale is at least
    beta_m / (beta_m + beta_s). Realized part-count changes minus their
    conditional means form the martingale.
    """
    rng = replica_rng(seed, index)
    names = [f.name for f in functionals]
    stats = TrajectoryStats(names=names, burn_in=burn_in, stride=stride)
    sums = {name: CompensatedSum() for name in names}

    rate = params.beta_m + params.beta_s
    bound = params.beta_m / rate
    squares = CompensatedSum()
    martingale = CompensatedSum()

    p = Partition.single()
    for k in range(steps):
        if k >= burn_in and (k - burn_in) % stride == 0:
            for f, name in zip(functionals, names):
                sums[name].add(f.value(p))
            stats.samples += 1

        z2 = z_moment(p, 2)
        squares.add(z2)
        drift = rate * z2 - params.beta_m * p.mass * p.mass
        try:
            nxt = step(p, params, sigma, rng)
        except PartitionUnderflowError as e:
            logger.warning(f"Replica {index} stopped at step {k}: {e}")
            stats.stopped_early = True
            break
        martingale.add((nxt.count - p.count) - drift)
        stats.max_mass_drift = max(stats.max_mass_drift, abs(nxt.mass - 1.0))
        p = nxt
        stats.steps = k + 1

        n = k + 1
        corrected = (squares.value + martingale.value / rate) / n
        margin = corrected - bound
        if margin < stats.min_bound_margin:
            stats.min_bound_margin = margin
        if margin < -_BOUND_SLACK:
            stats.bound_ok = False
        if squares.value / n < bound - 10.0 / n:
            stats.raw_bound_violations += 1

    stats.sums = {name: acc.value for name, acc in sums.items()}
    stats.final_part_count = p.count
    return stats


def run_cesaro(
    params: KernelParams,
    sigma: SigmaSpec,
    steps: int,
    seed: int,
    burn_in: Optional[int] = None,
    functionals: Optional[Sequence[Functional]] = None,
    replicas: int = 16,
    stride: int = 1,
    targets: Optional[Dict[str, float]] = None,
    abs_tol: float = 0.0,
    workers: Optional[int] = None
) -> ExperimentReport:
    """
    Cesaro averages of functionals from p-bar over independent replicas.

    Z2 is always tracked with target beta_m / (beta_m + beta_s), the value of
    the average of |p|_2^2 under any invariant law on the simplex.

    Args:
        params: Kernel parameters
        sigma: Splitting measure
        steps: Steps per replica
        seed: Master seed
        burn_in: Steps discarded before averaging (default: 10% of steps)
        functionals: Extra functionals to average
        replicas: Number of independent replicas
        stride: Thinning stride
        targets: Optional targets for extra functionals by name
        abs_tol: Absolute tolerance floor for the Z2 verdict
        workers: Process pool size
    """
    logger.info("=== RUN-CHAIN ===")
    burn_in = int(steps * settings.burn_in_fraction) if burn_in is None else burn_in
    if not 0 <= burn_in < steps:
        raise ValueError(f"Need 0 <= burn_in < steps, got burn_in={burn_in}, steps={steps}")
    if stride < 1:
        raise ValueError(f"Stride must be >= 1, got {stride}")

    tracked: List[Functional] = [ZMoment(2)]
    for f in functionals or ():
        if f.name not in {g.name for g in tracked}:
            tracked.append(f)
    targets = dict(targets or {})
    targets.setdefault("Z2", params.beta_m / (params.beta_m + params.beta_s))

    started = time.perf_counter()
    task = partial(
        cesaro_trajectory,
        seed=seed, params=params, sigma=sigma, steps=steps,
        burn_in=burn_in, stride=stride, functionals=tracked,
    )
    results: List[TrajectoryStats] = run_replicas(task, range(replicas), workers)

    report = ExperimentReport(
        name="run-chain",
        params={
            **_chain_params(params, sigma),
            "steps": steps, "burn_in": burn_in, "stride": stride,
            "functionals": [f.name for f in tracked],
        },
        seed=seed,
        replicas=replicas,
    )
    for f in tracked:
        mean, se = mean_and_se([r.averages()[f.name] for r in results])
        target = targets.get(f.name)
        report.add(StatisticResult(
            name=f"cesaro_{f.name}",
            estimate=mean,
            se=se,
            target=target,
            provenance="drift balance of the part count" if f.name == "Z2" else "user target",
            rule=Rule.SIGMA if target is not None else Rule.DIAGNOSTIC,
            abs_tol=abs_tol if f.name == "Z2" else 0.0,
        ))

    report.add(StatisticResult(
        name="bound_violating_replicas",
        estimate=float(sum(not r.bound_ok for r in results)),
        target=0.0,
        provenance="corrected Cesaro average of |p|_2^2 >= beta_m/(beta_m+beta_s)",
        rule=Rule.AT_MOST,
    ))
    report.add(StatisticResult(
        name="min_bound_margin",
        estimate=min(r.min_bound_margin for r in results),
        rule=Rule.DIAGNOSTIC,
    ))
    report.add(StatisticResult(
        name="raw_bound_violations",
        estimate=float(sum(r.raw_bound_violations for r in results)),
        provenance="uncorrected averages against bound - 10/n",
        rule=Rule.DIAGNOSTIC,
    ))
    report.add(StatisticResult(
        name="max_mass_drift",
        estimate=max(r.max_mass_drift for r in results),
        target=steps * settings.tolerances.fp_tol,
        provenance="merges and splits conserve mass up to rounding",
        rule=Rule.AT_MOST,
    ))
    stopped = sum(r.stopped_early for r in results)
    if stopped:
        report.notes.append(f"{stopped} replicas stopped early on part underflow")

    report.replica_rows = [
        {"replica": i, "seed": seed, "estimate": r.averages()["Z2"], "steps": r.steps,
         "final_part_count": r.final_part_count, "stopped_early": r.stopped_early}
        for i, r in enumerate(results)
    ]
    report.wall_clock_seconds = time.perf_counter() - started
    report.finalize()
    logger.info(f"run-chain verdict: {report.verdict.value}")
    return report


# ==================== Return times ====================

# Stream of the stability-reference run, disjoint from the main replicas
REFERENCE_STREAM = 1


def return_time(
    index: int,
    seed: int,
    params: KernelParams,
    sigma: SigmaSpec,
    max_steps: int,
    stream: int = 0
) -> Optional[int]:
    """First n >= 1 with p(n) = p-bar, or None if censored at max_steps"""
    rng = replica_rng(seed, index, stream)
    p = Partition.single()
    for n in range(1, max_steps + 1):
        try:
            p = step(p, params, sigma, rng)
        except PartitionUnderflowError:
            return None
        if p.count == 1 and p.on_simplex():
            return n
    return None


def _return_time_block(
    block: Tuple[int, int],
    seed: int,
    params: KernelParams,
    sigma: SigmaSpec,
    max_steps: int,
    stream: int
) -> List[Optional[int]]:
    start, stop = block
    return [return_time(i, seed, params, sigma, max_steps, stream) for i in range(start, stop)]


def _return_times(
    params: KernelParams,
    sigma: SigmaSpec,
    max_steps: int,
    replicas: int,
    seed: int,
    workers: Optional[int],
    stream: int = 0
) -> List[Optional[int]]:
    sizes = split_budget(replicas, settings.hitting_blocks)
    blocks, start = [], 0
    for size in sizes:
        blocks.append((start, start + size))
        start += size
    task = partial(_return_time_block, seed=seed, params=params, sigma=sigma, max_steps=max_steps, stream=stream)
    chunks = run_replicas(task, blocks, workers)
    return [t for chunk in chunks for t in chunk]


def _summarize_times(times: Sequence[Optional[int]]) -> Tuple[float, float, float]:
    observed = [t for t in times if t is not None]
    censored = 1.0 - len(observed) / len(times)
    if not observed:
        return math.nan, math.nan, censored
    mean, se = mean_and_se(observed)
    return mean, se, censored


def estimate_hitting_time(
    params: KernelParams,
    sigma: SigmaSpec,
    max_steps: int,
    replicas: int,
    seed: int,
    reference_replicas: Optional[int] = None,
    max_censored: float = 0.01,
    workers: Optional[int] = None
) -> ExperimentReport:
    """
    Return time to p-bar from p-bar, censored at max_steps.

    When the splitting measure has a finite first inverse moment the censored
    fraction is judged against max_censored; otherwise it is a diagnostic.
    With reference_replicas the mean is recomputed on that many replicas drawn
    from a separate stream, and the two means must agree within 2 combined
    standard errors.
    """
    logger.info("=== ESTIMATE-HITTING ===")
    started = time.perf_counter()
    classification = classify(sigma)
    recurrent = classification.support_class is SupportClass.FINITE

    times = _return_times(params, sigma, max_steps, replicas, seed, workers)
    mean, se, censored = _summarize_times(times)

    report = ExperimentReport(
        name="estimate-hitting",
        params={**_chain_params(params, sigma), "max_steps": max_steps},
        seed=seed,
        replicas=replicas,
    )
    report.add(StatisticResult(name="mean_return_time", estimate=mean, se=se, rule=Rule.DIAGNOSTIC))
    report.add(StatisticResult(
        name="censored_fraction",
        estimate=censored,
        target=max_censored,
        provenance="finite expected return time" if recurrent else "open case, diagnostic only",
        rule=Rule.AT_MOST if recurrent else Rule.DIAGNOSTIC,
    ))
    first_step_returns = float(sum(1 for t in times if t == 1))
    report.add(StatisticResult(
        name="returns_at_step_one",
        estimate=first_step_returns,
        target=0.0,
        provenance="a split is forced from p-bar when beta_s = 1",
        rule=Rule.AT_MOST if params.beta_s == 1.0 else Rule.DIAGNOSTIC,
    ))

    if reference_replicas:
        ref_times = _return_times(params, sigma, max_steps, reference_replicas, seed, workers, REFERENCE_STREAM)
        ref_mean, ref_se, _ = _summarize_times(ref_times)
        report.add(StatisticResult(
            name="mean_shift_vs_reference",
            estimate=mean - ref_mean,
            se=math.hypot(se, ref_se),
            target=0.0,
            provenance=f"stability against {reference_replicas} replicas",
            sigmas=2.0,
        ))

    report.replica_rows = [
        {"replica": i, "seed": seed, "estimate": t, "steps": t if t is not None else max_steps, "censored": t is None}
        for i, t in enumerate(times)
    ]
    report.wall_clock_seconds = time.perf_counter() - started
    report.finalize()
    logger.info(f"estimate-hitting verdict: {report.verdict.value}")
    return report


# ==================== Support diagnostic ====================

def longest_nonincreasing_run(values: np.ndarray) -> int:
    """Length of the longest stretch over which values never increase"""
    if values.size == 0:
        return 0
    best = run = 1
    for prev, cur in zip(values[:-1], values[1:]):
        run = run + 1 if cur <= prev else 1
        best = max(best, run)
    return best


def trajectory_record(params: KernelParams, sigma: SigmaSpec, steps: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Part count and smallest part after each of the first `steps` steps"""
    rng = replica_rng(seed, 0)
    counts = np.zeros(steps, dtype=np.int64)
    smallest = np.zeros(steps)
    p = Partition.single()
    for n in range(steps):
        try:
            p = step(p, params, sigma, rng)
        except PartitionUnderflowError as e:
            logger.warning(f"Trajectory stopped at step {n}: {e}")
            return counts[:n], smallest[:n]
        counts[n] = p.count
        smallest[n] = p.smallest
    return counts, smallest


def diagnose_support(
    params: KernelParams,
    sigma: SigmaSpec,
    steps: int,
    seed: int,
    first_checkpoint: int = 1000
) -> ExperimentReport:
    """
    Window medians of the part count at decade checkpoints along one
    trajectory, judged against the support class of sigma.
    """
    logger.info("=== DIAGNOSE-SUPPORT ===")
    started = time.perf_counter()
    classification = classify(sigma)
    counts, smallest = trajectory_record(params, sigma, steps, seed)

    checkpoints = []
    n = first_checkpoint
    while n <= counts.size:
        checkpoints.append(n)
        n *= 10
    medians = {c: window_median(counts, c) for c in checkpoints}

    report = ExperimentReport(
        name="diagnose-support",
        params={**_chain_params(params, sigma), "steps": steps, "support": classification.support_class.value},
        seed=seed,
        replicas=1,
    )
    for c in checkpoints:
        report.add(StatisticResult(name=f"x0_median_{c}", estimate=medians[c], rule=Rule.DIAGNOSTIC))

    if len(checkpoints) >= 2:
        last, prev, first = checkpoints[-1], checkpoints[-2], checkpoints[0]
        if classification.support_class is SupportClass.FINITE:
            report.add(StatisticResult(
                name="x0_median_drift",
                estimate=medians[last] - medians[prev],
                target=0.0,
                abs_tol=2.0,
                provenance="tight part count under positive recurrence",
                rule=Rule.WITHIN,
            ))
        else:
            report.add(StatisticResult(
                name="x0_median_growth",
                estimate=medians[last] - medians[first],
                target=0.0,
                provenance="part count escapes when sigma has infinite first inverse moment",
                rule=Rule.GREATER_THAN if classification.support_class is SupportClass.INFINITE else Rule.DIAGNOSTIC,
            ))
    else:
        report.notes.append("trajectory too short for two checkpoints")

    report.add(StatisticResult(
        name="longest_nonincreasing_min_part_run",
        estimate=float(longest_nonincreasing_run(smallest)),
        rule=Rule.DIAGNOSTIC,
    ))
    report.add(StatisticResult(
        name="final_min_part",
        estimate=float(smallest[-1]) if smallest.size else None,
        rule=Rule.DIAGNOSTIC,
    ))
    report.replica_rows = [
        {"replica": 0, "seed": seed, "checkpoint": c, "estimate": medians[c], "steps": c}
        for c in checkpoints
    ]
    report.wall_clock_seconds = time.perf_counter() - started
    report.finalize()
    logger.info(f"diagnose-support verdict: {report.verdict.value}")
    return report
