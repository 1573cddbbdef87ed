"""
Tests for the experiment harness: streams, accumulators, reports and the
chain and PD(theta) experiments at small budgets
"""
import json
import math
import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import ConfigError
from core.functionals import TopProduct, ZMoment
from core.kernel import KernelParams
from core.poisson_dirichlet import PDParams
from core.sigma import AtomicSigma, UniformSigma
from experiments import invariance_experiments as inv
from experiments.accumulators import CompensatedSum, MomentAccumulator, mean_and_se, merge_all, window_median
from experiments.chain_experiments import (
    REFERENCE_STREAM,
    diagnose_support,
    estimate_hitting_time,
    longest_nonincreasing_run,
    return_time,
    run_cesaro,
)
from experiments.reports import ExperimentReport, Rule, StatisticResult, Verdict
from experiments.runner import run_replicas, split_budget
from experiments.streams import replica_rng

HALF = AtomicSigma(atoms=[(0.5, 1.0)])


@pytest.fixture
def unit():
    return KernelParams(beta_m=1.0, beta_s=1.0)


@pytest.fixture
def pd_one():
    return PDParams(theta=1.0)


def _square(i):
    return i * i


class TestStreams:
    """Tests for per-replica random streams"""

    def test_reproducible(self):
        """Test that the same (seed, replica, stream) gives the same draws"""
        a = replica_rng(7, 3).random(5)
        b = replica_rng(7, 3).random(5)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        """Test that replicas and sub-streams are independent streams"""
        base = replica_rng(7, 0).random(5)
        assert not np.array_equal(base, replica_rng(7, 1).random(5))
        assert not np.array_equal(base, replica_rng(7, 0, stream=1).random(5))

    def test_negative_seed(self):
        """Test that negative seeds are rejected"""
        with pytest.raises(ValueError):
            replica_rng(-1, 0)


class TestAccumulators:
    """Tests for streaming moments"""

    def test_merge_matches_sequential(self):
        """Test that merged chunks give the moments of the whole sample"""
        values = np.random.default_rng(1).normal(size=300)
        chunks = []
        for part in np.array_split(values, 7):
            acc = MomentAccumulator()
            acc.add_many(part)
            chunks.append(acc)
        merged = merge_all(chunks)
        assert merged.count == 300
        assert merged.mean == pytest.approx(values.mean(), rel=1e-12)
        assert merged.variance == pytest.approx(values.var(ddof=1), rel=1e-10)

    def test_empty_merge(self):
        """Test merging with empty accumulators"""
        acc = MomentAccumulator()
        acc.add(2.0)
        assert acc.merge(MomentAccumulator()).mean == 2.0
        assert math.isnan(acc.standard_error)

    def test_mean_and_se(self):
        """Test replica mean and standard error"""
        mean, se = mean_and_se([1.0, 2.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert se == pytest.approx(1.0 / math.sqrt(3.0))

    def test_compensated_sum(self):
        """Test that small terms survive cancellation"""
        total = CompensatedSum()
        for x in (1e16, 1.0, -1e16):
            total.add(x)
        assert total.value == 1.0

    def test_window_median(self):
        """Test the median over (end/2, end]"""
        assert window_median(np.arange(1, 11), 10) == pytest.approx(8.0)


class TestRunner:
    """Tests for replica execution"""

    def test_split_budget(self):
        """Test near-equal chunk sizes"""
        assert split_budget(10, 3) == [4, 3, 3]
        assert split_budget(2, 16) == [1, 1]

    def test_order_kept_across_workers(self):
        """Test that pooled results come back in index order"""
        assert run_replicas(_square, range(6), workers=2) == [0, 1, 4, 9, 16, 25]


class TestReports:
    """Tests for statistic judgement and report verdicts"""

    def test_sigma_rule_with_floor(self):
        """Test that abs_tol widens the SE band"""
        s = StatisticResult(name="x", estimate=0.51, se=0.001, target=0.5)
        assert s.judge() is False
        s = StatisticResult(name="x", estimate=0.51, se=0.001, target=0.5, abs_tol=0.02)
        assert s.judge() is True

    def test_one_sided_rules(self):
        """Test AT_MOST, AT_LEAST and GREATER_THAN"""
        assert StatisticResult(name="a", estimate=0.0, target=0.0, rule=Rule.AT_MOST).judge()
        assert StatisticResult(name="b", estimate=0.2, target=0.01, rule=Rule.AT_LEAST).judge()
        assert not StatisticResult(name="c", estimate=0.0, target=0.0, rule=Rule.GREATER_THAN).judge()

    def test_non_finite_fails(self):
        """Test that NaN estimates fail judged rules and are skipped as diagnostics"""
        assert StatisticResult(name="x", estimate=math.nan, target=0.0).judge() is False
        assert StatisticResult(name="x", estimate=math.nan, rule=Rule.DIAGNOSTIC).judge() is None

    def test_negative_control_verdicts(self):
        """Test pass and inconclusive outcomes of a negative control"""
        report = ExperimentReport(name="t", seed=0, replicas=1, expect_failure=True)
        report.add(StatisticResult(name="x", estimate=0.0, se=0.1, target=0.0))
        assert report.finalize().verdict is Verdict.INCONCLUSIVE
        assert report.passed

        report = ExperimentReport(name="t", seed=0, replicas=1, expect_failure=True)
        report.add(StatisticResult(name="x", estimate=1.0, se=0.1, target=0.0))
        assert report.finalize().verdict is Verdict.PASS

    def test_json_layout(self):
        """Test the canonical JSON: schema tag, no timing or rows"""
        report = ExperimentReport(name="t", seed=3, replicas=1, wall_clock_seconds=1.5)
        report.replica_rows = [{"replica": 0}]
        report.add(StatisticResult(name="x", estimate=math.inf, rule=Rule.DIAGNOSTIC))
        payload = json.loads(report.finalize().to_json())
        assert payload["schema"] == "v1"
        assert "wall_clock_seconds" not in payload
        assert "replica_rows" not in payload
        assert payload["statistics"][0]["estimate"] is None

    def test_statistic_lookup(self):
        """Test lookup by name"""
        report = ExperimentReport(name="t", seed=0, replicas=1)
        with pytest.raises(KeyError):
            report.statistic("missing")


class TestChainExperiments:
    """Tests for chain runs from the single-part state"""

    def test_cesaro(self, unit):
        """Test Cesaro averages and the pathwise corrected bound"""
        report = run_cesaro(unit, UniformSigma(), steps=2000, seed=11, replicas=4)
        assert report.statistic("bound_violating_replicas").estimate == 0.0
        assert 0.3 < report.statistic("cesaro_Z2").estimate < 0.8
        assert report.statistic("min_bound_margin").estimate >= -1e-12
        drift = report.statistic("max_mass_drift")
        assert drift.passed
        assert drift.target == pytest.approx(2000 * 1e-15)
        assert len(report.replica_rows) == 4

    def test_cesaro_independent_of_workers(self, unit):
        """Test that the JSON report does not depend on the worker count"""
        one = run_cesaro(unit, UniformSigma(), steps=500, seed=5, replicas=3, workers=1)
        two = run_cesaro(unit, UniformSigma(), steps=500, seed=5, replicas=3, workers=2)
        assert one.to_json() == two.to_json()

    def test_cesaro_extra_functionals(self, unit):
        """Test that extra functionals without a target are diagnostics"""
        report = run_cesaro(unit, HALF, steps=300, seed=2, replicas=2, functionals=[TopProduct(1)])
        assert report.statistic("cesaro_p1").rule is Rule.DIAGNOSTIC

    def test_cesaro_rejects_burn_in(self, unit):
        """Test that burn-in must leave steps to average"""
        with pytest.raises(ValueError):
            run_cesaro(unit, UniformSigma(), steps=100, seed=0, burn_in=100)

    def test_hitting_half_atom(self, unit):
        """Test return times for delta at 1/2: never at step one"""
        report = estimate_hitting_time(unit, HALF, max_steps=500, replicas=20, seed=4)
        assert report.statistic("returns_at_step_one").estimate == 0.0
        assert report.statistic("returns_at_step_one").passed
        assert report.statistic("censored_fraction").rule is Rule.AT_MOST
        assert report.statistic("mean_return_time").estimate >= 2.0

    def test_hitting_with_reference(self, unit):
        """Test that the reference run adds the stability statistic"""
        report = estimate_hitting_time(unit, HALF, max_steps=200, replicas=20, seed=4, reference_replicas=20)
        shift = report.statistic("mean_shift_vs_reference")
        assert math.isfinite(shift.estimate)
        assert shift.se > report.statistic("mean_return_time").se

    def test_reference_stream_is_disjoint(self, unit):
        """Test that reference replicas do not replay the main replicas"""
        main_run = [return_time(i, 4, unit, HALF, 200) for i in range(20)]
        reference = [return_time(i, 4, unit, HALF, 200, stream=REFERENCE_STREAM) for i in range(20)]
        assert main_run != reference
        assert main_run == [return_time(i, 4, unit, HALF, 200, stream=0) for i in range(20)]

    def test_support_diagnostic(self, unit):
        """Test checkpoints and the finite-support drift statistic"""
        report = diagnose_support(unit, HALF, steps=10000, seed=8)
        names = [s.name for s in report.statistics]
        assert "x0_median_1000" in names
        assert "x0_median_10000" in names
        assert "x0_median_drift" in names

    def test_longest_run(self):
        """Test the longest nonincreasing stretch"""
        assert longest_nonincreasing_run(np.array([3.0, 2.0, 2.0, 5.0, 1.0])) == 3
        assert longest_nonincreasing_run(np.array([])) == 0


class TestInvarianceExperiments:
    """Tests for PD(theta) checks at small budgets"""

    def test_invariance_passes(self, pd_one, unit):
        """Test one-step invariance of PD(1) under the uniform measure"""
        report = inv.test_invariance_onestep(pd_one, unit, UniformSigma(), [ZMoment(2)], samples=400, seed=1)
        assert report.verdict is Verdict.PASS
        assert report.statistic("mean_Z2").rule is Rule.DIAGNOSTIC

    def test_theta_mismatch(self, unit):
        """Test that PD theta must equal beta_s / beta_m"""
        with pytest.raises(ConfigError):
            inv.test_invariance_onestep(PDParams(theta=2.0), unit, UniformSigma(), [ZMoment(2)], samples=10, seed=1)

    def test_negative_control(self, pd_one, unit):
        """Test that delta at 1/2 moves E[Z_2] away from its PD(1) value"""
        report = inv.test_invariance_onestep(pd_one, unit, HALF, [ZMoment(2)], samples=2000, seed=3, control=True)
        assert report.expect_failure
        assert report.verdict is Verdict.PASS
        assert report.statistic("delta_Z2").estimate < 0.0

    def test_reversibility_same_functional(self, pd_one, unit):
        """Test that F = G gives an exact zero"""
        report = inv.test_reversibility(pd_one, unit, ZMoment(2), ZMoment(2), samples=50, seed=2)
        assert report.statistic("GKF_minus_FKG[Z2,Z2]").estimate == 0.0
        assert report.verdict is Verdict.PASS

    def test_reversibility(self, pd_one, unit):
        """Test E[Z3 K Z2] = E[Z2 K Z3] under PD(1)"""
        report = inv.test_reversibility(pd_one, unit, ZMoment(2), ZMoment(3), samples=400, seed=6)
        assert report.verdict is Verdict.PASS

    def test_increments(self, pd_one, unit):
        """Test that expected increments vanish on average"""
        report = inv.test_increment_identities(pd_one, unit, UniformSigma(), [2, 3], [[2]], samples=400, seed=9)
        assert [s.name for s in report.statistics] == ["increment_Z2", "increment_Z3", "increment_P2"]
        assert report.verdict is Verdict.PASS

    def test_threshold_increments(self, pd_one, unit):
        """Test that count and mass above a threshold have zero mean increment"""
        report = inv.test_increment_identities(pd_one, unit, UniformSigma(), [2], [], samples=400, seed=9,
                                               thresholds=[0.1])
        assert [s.name for s in report.statistics] == ["increment_Z2", "increment_N0.1", "increment_mass0.1"]
        assert report.params["thresholds"] == [0.1]
        assert report.verdict is Verdict.PASS

    def test_moment_identity(self, pd_one):
        """Test E[Z_j] against the one-point density"""
        report = inv.test_moment_identity(pd_one, [2, 3], samples=2000, seed=12)
        assert report.statistic("E_Z2").target == pytest.approx(0.5)
        assert report.statistic("closed_form_Z3").estimate == pytest.approx(1.0 / 3.0)
        assert report.verdict is Verdict.PASS

    def test_moment_identity_independent_of_workers(self, pd_one):
        """Test that chunked sampling gives the same report on 1 and 2 workers"""
        one = inv.test_moment_identity(pd_one, [2], samples=200, seed=4, workers=1)
        two = inv.test_moment_identity(pd_one, [2], samples=200, seed=4, workers=2)
        assert one.to_json() == two.to_json()

    def test_uniformity_structure(self, pd_one):
        """Test the KS report layout"""
        report = inv.test_size_biased_uniformity(pd_one, samples=300, seed=5)
        pvalue = report.statistic("ks_pvalue")
        assert pvalue.rule is Rule.AT_LEAST
        assert 0.0 <= pvalue.estimate <= 1.0

    def test_uniformity_passes(self, pd_one):
        """Test that the size-biased part of PD(1) is uniform at 10^4 draws"""
        report = inv.test_size_biased_uniformity(pd_one, samples=10_000, seed=21, significance=0.01)
        assert report.statistic("ks_pvalue").estimate > 0.01
        assert report.verdict is Verdict.PASS

    def test_sampler_structure(self):
        """Test the two-sample KS report layout"""
        report = inv.test_sampler_agreement(PDParams(theta=2.0), samples=100, seed=5)
        assert [s.name for s in report.statistics] == ["ks_pvalue_p1", "ks_pvalue_Z2", "ks_pvalue_Z3"]

    @pytest.mark.parametrize("theta", [1.0, 2.0])
    def test_samplers_agree(self, theta):
        """Test stick-breaking against truncated-Poisson samples at 10^4 each"""
        report = inv.test_sampler_agreement(PDParams(theta=theta), samples=10_000, seed=22, significance=0.01)
        assert all(s.estimate > 0.01 for s in report.statistics)
        assert report.verdict is Verdict.PASS

    def test_estimate_theta(self, pd_one):
        """Test recovery of theta from the Z_2 balance"""
        report = inv.estimate_theta(pd_one, 2, samples=2000, seed=10)
        assert report.verdict is Verdict.PASS
        assert report.statistic("theta_hat").se > 0.0

    def test_estimate_theta_needs_k(self, pd_one):
        """Test that k < 2 is rejected"""
        with pytest.raises(ConfigError):
            inv.estimate_theta(pd_one, 1, samples=10, seed=0)

    def test_check_mk(self):
        """Test the correlation-density identities at random points"""
        report = inv.check_mk(1.0, 2, points=5, seed=3)
        assert report.verdict is Verdict.PASS
        assert len(report.replica_rows) == 5

    def test_random_simplex_point(self):
        """Test that points lie inside the open simplex"""
        x = inv.random_simplex_point(np.random.default_rng(0), 3)
        assert len(x) == 3
        assert all(v > 0 for v in x) and sum(x) < 1.0
