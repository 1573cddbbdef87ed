"""
Tests for splitting measures: parsing, distribution functions, split
moments and chain classification
"""
import json
import math
import sys
import os
from unittest.mock import patch

import numpy as np
import pytest
from scipy import integrate, stats

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import QuadratureError, SigmaSpecError
from core.sigma import (
    AtomicSigma,
    PowerLawSigma,
    RecurrenceClass,
    SupportClass,
    TabulatedSigma,
    UniformSigma,
    classify,
    classify_integrals,
    integral_inverse_cdf,
    integral_one_over_x,
    parse_sigma,
    sample_sigma,
    sigma_cdf,
    sigma_cdf_left,
    sigma_quantile,
    sigma_tag,
    split_moment,
    split_quadrature,
)

HALF_ATOM = '{"type":"atomic","atoms":[[0.5,1.0]]}'


class TestParsing:
    """Tests for tagged-JSON splitting measures"""

    def test_parse_each_variant(self):
        """Test that every tag parses to its class"""
        assert isinstance(parse_sigma('{"type":"uniform"}'), UniformSigma)
        assert isinstance(parse_sigma({"type": "power_law", "a": 0.5}), PowerLawSigma)
        assert isinstance(parse_sigma(HALF_ATOM), AtomicSigma)
        table = parse_sigma({"type": "tabulated", "probabilities": [0, 1], "quantiles": [0, 0.5]})
        assert isinstance(table, TabulatedSigma)

    def test_atoms_sorted(self):
        """Test that atoms are stored by location"""
        spec = parse_sigma({"type": "atomic", "atoms": [[0.4, 0.5], [0.1, 0.5]]})
        assert spec.atoms[0] == (0.1, 0.5)

    def test_unknown_tag(self):
        """Test that an unknown type raises SigmaSpecError"""
        with pytest.raises(SigmaSpecError):
            parse_sigma('{"type":"gamma"}')

    def test_bad_weights_name_field(self):
        """Test that weights not summing to one name the atoms field"""
        with pytest.raises(SigmaSpecError, match="atoms"):
            parse_sigma({"type": "atomic", "atoms": [[0.5, 0.6]]})

    def test_nonpositive_exponent_names_field(self):
        """Test that a power law with a <= 0 names the exponent"""
        with pytest.raises(SigmaSpecError, match=r"power_law\.a"):
            parse_sigma({"type": "power_law", "a": 0.0})

    def test_atom_outside_half(self):
        """Test that atoms must lie in (0, 1/2]"""
        with pytest.raises(SigmaSpecError):
            parse_sigma({"type": "atomic", "atoms": [[0.6, 1.0]]})

    def test_table_must_increase(self):
        """Test tabulated validation"""
        with pytest.raises(SigmaSpecError):
            parse_sigma({"type": "tabulated", "probabilities": [0, 1], "quantiles": [0.3, 0.2]})

    def test_json_export(self):
        """Test that model JSON parses back to an equal spec"""
        spec = PowerLawSigma(a=2.0)
        assert parse_sigma(spec.model_dump_json()) == spec
        assert json.loads(spec.model_dump_json())["type"] == "power_law"

    def test_tags(self):
        """Test file name tags"""
        assert sigma_tag(UniformSigma()) == "uniform"
        assert sigma_tag(PowerLawSigma(a=0.5)) == "pow0.5"
        assert sigma_tag(parse_sigma(HALF_ATOM)) == "delta0.5"
        assert sigma_tag(AtomicSigma(atoms=[(0.1, 0.5), (0.4, 0.5)])) == "atomic2"


class TestDistribution:
    """Tests for CDFs, quantiles and sampling"""

    def test_uniform(self):
        """Test the uniform CDF and quantile"""
        spec = UniformSigma()
        assert sigma_cdf(spec, 0.25) == pytest.approx(0.5)
        assert sigma_quantile(spec, 0.5) == pytest.approx(0.25)
        assert sigma_cdf(spec, 0.7) == 1.0

    def test_power_law(self):
        """Test that the power-law quantile inverts its CDF"""
        spec = PowerLawSigma(a=0.5)
        for s in (0.1, 0.5, 0.9):
            assert sigma_cdf(spec, sigma_quantile(spec, s)) == pytest.approx(s)

    def test_atomic_left_and_right_cdf(self):
        """Test that the left CDF excludes the atom at x"""
        spec = AtomicSigma(atoms=[(0.25, 0.5), (0.5, 0.5)])
        assert sigma_cdf(spec, 0.25) == pytest.approx(0.5)
        assert sigma_cdf_left(spec, 0.25) == 0.0
        assert sigma_quantile(spec, 0.75) == 0.5

    def test_samples_in_range(self):
        """Test that every sampled fraction lies in (0, 1/2]"""
        rng = np.random.default_rng(3)
        for spec in (UniformSigma(), PowerLawSigma(a=0.5), parse_sigma(HALF_ATOM)):
            draws = [sample_sigma(spec, rng) for _ in range(2000)]
            assert all(0.0 < u <= 0.5 for u in draws)

    def test_power_law_sample_mean(self):
        """Test the sample mean of PowerLaw(2) against a / (2 (a + 1))"""
        rng = np.random.default_rng(4)
        draws = np.array([sample_sigma(PowerLawSigma(a=2.0), rng) for _ in range(20000)])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 1.0 / 3.0) <= 4 * se

    def test_power_law_ks(self):
        """Test PowerLaw(2) draws against the CDF (2x)^2 with a KS test"""
        rng = np.random.default_rng(41)
        draws = [sample_sigma(PowerLawSigma(a=2.0), rng) for _ in range(10_000)]
        result = stats.kstest(draws, lambda x: np.clip(2.0 * np.asarray(x), 0.0, 1.0) ** 2)
        assert result.pvalue > 0.01


class TestSplitMoments:
    """Tests for split quadrature and split moments"""

    def test_uniform_closed_form(self):
        """Test 2/(k+1) for the uniform measure"""
        for k in (0, 1, 2, 3):
            assert split_moment(UniformSigma(), k) == pytest.approx(2.0 / (k + 1))

    @pytest.mark.parametrize("a", [0.5, 2.0, 3.0])
    @pytest.mark.parametrize("k", [2, 3])
    def test_power_law_closed_form(self, a, k):
        """Test the incomplete-beta closed form against adaptive quadrature"""
        spec = PowerLawSigma(a=a)
        expected, _ = integrate.quad(lambda t: spec.density(t) * (t ** k + (1 - t) ** k), 0.0, 0.5)
        assert split_moment(spec, k) == pytest.approx(expected, rel=1e-8)

    def test_atomic_exact(self):
        """Test the exact sum for delta at 1/2"""
        assert split_moment(parse_sigma(HALF_ATOM), 2) == pytest.approx(0.5)

    def test_tabulated_matches_uniform(self):
        """Test a one-segment table against the uniform closed form"""
        table = TabulatedSigma(probabilities=[0.0, 1.0], quantiles=[0.0, 0.5])
        assert split_moment(table, 3) == pytest.approx(0.5, rel=1e-12)

    def test_quadrature_weights_sum_to_one(self):
        """Test that split quadrature weights form a probability"""
        for spec in (UniformSigma(), PowerLawSigma(a=0.5), PowerLawSigma(a=3.0)):
            u, w = split_quadrature(spec, 16, breakpoints=(0.1, 0.3))
            assert w.sum() == pytest.approx(1.0)
            assert np.all((u > 0) & (u <= 0.5))

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_power_law_quadrature(self, k):
        """Test split quadrature of PowerLaw(3) against the closed form"""
        spec = PowerLawSigma(a=3.0)
        u, w = split_quadrature(spec, 16, breakpoints=(0.2,))
        assert float(np.dot(w, u ** k + (1 - u) ** k)) == pytest.approx(split_moment(spec, k), rel=1e-12)

    def test_breakpoints_add_panels(self):
        """Test that each interior breakpoint adds a panel"""
        u, _ = split_quadrature(UniformSigma(), 8, breakpoints=(0.1, 0.3, 0.7))
        assert u.size == 24

    def test_atomic_quadrature_is_exact(self):
        """Test that atomic measures return their atoms"""
        u, w = split_quadrature(AtomicSigma(atoms=[(0.1, 0.25), (0.5, 0.75)]), 64)
        assert list(u) == [0.1, 0.5]
        assert list(w) == [0.25, 0.75]


class TestClassification:
    """Tests for the integral criteria and the decision rule"""

    def test_half_atom(self):
        """Test the classify-sigma output for delta at 1/2"""
        result = classify(parse_sigma(HALF_ATOM))
        assert result.to_dict() == {"support": "finite", "recurrence": "positive_recurrent", "I1": 2.0, "I2": "inf"}

    def test_power_law_half_is_transient(self):
        """Test PowerLaw(1/2): infinite support, transient"""
        result = classify(PowerLawSigma(a=0.5))
        assert result.support_class is SupportClass.INFINITE
        assert result.recurrence_class is RecurrenceClass.TRANSIENT
        assert result.integral_inverse_cdf == pytest.approx(1.0)

    def test_power_law_two_is_recurrent(self):
        """Test PowerLaw(2): finite support, positive recurrent"""
        result = classify(PowerLawSigma(a=2.0))
        assert result.support_class is SupportClass.FINITE
        assert result.recurrence_class is RecurrenceClass.POSITIVE_RECURRENT
        assert result.integral_one_over_x == pytest.approx(4.0)

    def test_uniform_is_open(self):
        """Test that the uniform measure leaves recurrence unknown"""
        result = classify(UniformSigma())
        assert result.support_class is SupportClass.INFINITE
        assert result.recurrence_class is RecurrenceClass.UNKNOWN

    def test_numeric_matches_closed_forms(self):
        """Test dyadic-panel quadrature against the closed forms"""
        assert integral_inverse_cdf(PowerLawSigma(a=0.5), numeric=True) == pytest.approx(1.0, abs=1e-6)
        assert integral_one_over_x(PowerLawSigma(a=2.0), numeric=True) == pytest.approx(4.0, abs=1e-6)
        assert integral_one_over_x(PowerLawSigma(a=0.5), numeric=True) == math.inf
        assert integral_one_over_x(UniformSigma(), numeric=True) == math.inf
        assert integral_inverse_cdf(UniformSigma(), numeric=True) == math.inf

    def test_numeric_classification_agrees(self):
        """Test that numeric classification gives the same classes"""
        for spec in (PowerLawSigma(a=0.5), PowerLawSigma(a=2.0), UniformSigma()):
            closed, numeric = classify(spec), classify(spec, numeric=True)
            assert closed.support_class is numeric.support_class
            assert closed.recurrence_class is numeric.recurrence_class

    def test_unknown_first_integral(self):
        """Test that an unknown first integral gives unknown support"""
        result = classify_integrals(None, None)
        assert result.support_class is SupportClass.UNKNOWN
        assert result.to_dict()["I1"] == "unknown"

    def test_failed_quadrature_is_unknown(self):
        """Test that quadrature failure surfaces as an unknown integral, not an error"""
        with patch("core.sigma.dyadic_integral", side_effect=QuadratureError("no verdict")):
            assert integral_one_over_x(UniformSigma(), numeric=True) is None
            result = classify(UniformSigma(), numeric=True)
        assert result.support_class is SupportClass.UNKNOWN
        assert result.to_dict()["I2"] == "unknown"

    def test_tabulated_bounded_density_near_zero(self):
        """Test a table with an atomless gap near 0 as finite support"""
        table = TabulatedSigma(probabilities=[0.0, 1.0], quantiles=[0.1, 0.5])
        result = classify(table)
        assert result.support_class is SupportClass.FINITE
        assert result.integral_one_over_x == pytest.approx(2.5 * math.log(5.0), rel=1e-6)
