"""
Tests for partitions, merge/split operators and size-biased sampling
"""
import math
import sys
import os

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import PartitionError, PartitionUnderflowError
from core.partition import (
    AliasTable,
    Partition,
    merge,
    n_polynomial,
    random_partition,
    size_biased_pair,
    split,
    threshold_count,
    z_moment,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def three_parts():
    return Partition([0.2, 0.5, 0.3])


class TestPartitionConstruction:
    """Tests for validation and normal form"""

    def test_parts_sorted_descending(self, three_parts):
        """Test that parts are stored largest first"""
        assert three_parts.parts == (0.5, 0.3, 0.2)

    def test_zeros_dropped(self):
        """Test that exact zeros never appear in the stored parts"""
        p = Partition([0.0, 0.6, 0.0, 0.4])
        assert p.parts == (0.6, 0.4)
        assert p.count == 2

    def test_negative_part_rejected(self):
        """Test that a negative part raises"""
        with pytest.raises(PartitionError):
            Partition([0.5, -0.1])

    def test_mass_above_one_rejected(self):
        """Test that total mass above one raises"""
        with pytest.raises(PartitionError):
            Partition([0.7, 0.4])

    def test_empty_rejected(self):
        """Test that a partition needs a positive part"""
        with pytest.raises(PartitionError):
            Partition([0.0])

    def test_partition_errors_are_value_errors(self):
        """Test that callers can catch ValueError"""
        with pytest.raises(ValueError):
            Partition([math.nan])

    def test_single_state(self):
        """Test the one-part state p-bar"""
        p = Partition.single()
        assert p.is_single()
        assert p.mass == 1.0
        assert p.smallest == p.largest == 1.0

    def test_sub_unit_mass_allowed(self):
        """Test that partitions of mass below one are accepted but are not on the simplex"""
        p = Partition([0.3, 0.2])
        assert p.mass == pytest.approx(0.5)
        assert not p.on_simplex()

    def test_json(self, three_parts):
        """Test JSON export and import"""
        assert Partition.from_json(three_parts.to_json()) == three_parts

    def test_malformed_json(self):
        """Test that malformed or non-array JSON raises"""
        with pytest.raises(PartitionError):
            Partition.from_json("[0.5,")
        with pytest.raises(PartitionError):
            Partition.from_json('{"p": 1}')

    def test_isclose(self):
        """Test part-wise comparison within the structural tolerance"""
        a = Partition([0.5, 0.5])
        b = Partition([0.5 + 1e-14, 0.5 - 1e-14])
        assert a.isclose(b)
        assert not a.isclose(Partition([0.5, 0.25, 0.25]))

    def test_padded(self, three_parts):
        """Test zero padding of the part vector"""
        assert list(three_parts.padded(5)) == [0.5, 0.3, 0.2, 0.0, 0.0]


class TestMergeSplit:
    """Tests for the merge and split operators"""

    def test_merge(self, three_parts):
        """Test merging the two smallest parts"""
        merged = merge(three_parts, 1, 2)
        assert merged.parts == pytest.approx((0.5, 0.5))

    def test_merge_keeps_order(self):
        """Test that the merged part is inserted at its sorted position"""
        p = Partition([0.4, 0.3, 0.2, 0.1])
        assert merge(p, 2, 3).parts == pytest.approx((0.4, 0.3, 0.3))
        assert merge(p, 1, 3).parts == pytest.approx((0.4, 0.4, 0.2))

    def test_merge_same_index_rejected(self, three_parts):
        """Test that a part cannot merge with itself"""
        with pytest.raises(PartitionError):
            merge(three_parts, 1, 1)

    def test_merge_index_out_of_range(self, three_parts):
        """Test that indices are checked"""
        with pytest.raises(PartitionError):
            merge(three_parts, 0, 3)

    def test_split_single(self):
        """Test splitting p-bar at a quarter"""
        p = split(Partition.single(), 0, 0.25)
        assert p.parts == (0.75, 0.25)
        assert p.mass == 1.0

    def test_split_inserts_sorted(self, three_parts):
        """Test that both pieces land at their sorted positions"""
        p = split(three_parts, 0, 0.5)
        assert p.parts == pytest.approx((0.3, 0.25, 0.25, 0.2))

    def test_split_fraction_range(self, three_parts):
        """Test that the split fraction must lie strictly inside (0, 1)"""
        for u in (0.0, 1.0, -0.1):
            with pytest.raises(PartitionError):
                split(three_parts, 0, u)

    def test_split_underflow(self):
        """Test that pieces below the underflow floor raise"""
        with pytest.raises(PartitionUnderflowError):
            split(Partition([1e-300]), 0, 0.5)

    def test_operators_preserve_mass(self, rng):
        """Test that merges and splits keep the total mass"""
        p = random_partition(rng, 7)
        for _ in range(50):
            if p.count > 1:
                i, j = rng.choice(p.count, size=2, replace=False)
                p = merge(p, int(i), int(j))
            else:
                p = split(p, 0, 0.3)
            assert p.mass == pytest.approx(1.0, abs=1e-14)
            assert list(p.parts) == sorted(p.parts, reverse=True)


class TestStatistics:
    """Tests for Z_j, P_n and threshold counts"""

    def test_z_moments(self):
        """Test Z_1, Z_2 and Z_3 on two halves"""
        p = Partition([0.5, 0.5])
        assert z_moment(p, 1) == 1.0
        assert z_moment(p, 2) == pytest.approx(0.5)
        assert z_moment(p, 3) == pytest.approx(0.25)

    def test_z_moment_order(self):
        """Test that Z_0 is rejected"""
        with pytest.raises(PartitionError):
            z_moment(Partition.single(), 0)

    def test_n_polynomial(self):
        """Test P_n as a product of Z_j powers"""
        p = Partition([0.5, 0.5])
        assert n_polynomial(p, (2,)) == pytest.approx(0.25)
        assert n_polynomial(p, (1, 1)) == pytest.approx(0.125)
        assert n_polynomial(p, (0, 1)) == pytest.approx(0.25)

    def test_n_polynomial_requires_trailing_multiplicity(self):
        """Test that the last multiplicity must be positive"""
        with pytest.raises(PartitionError):
            n_polynomial(Partition.single(), (1, 0))

    def test_threshold_count(self, three_parts):
        """Test the strict threshold"""
        assert threshold_count(three_parts, 0.0) == 3
        assert threshold_count(three_parts, 0.2) == 2
        assert threshold_count(three_parts, 0.5) == 0


class TestSizeBiasedSampling:
    """Tests for size-biased index draws"""

    def test_single_part(self, rng):
        """Test that p-bar always yields index 0"""
        assert size_biased_pair(Partition.single(), rng) == (0, 0)

    def test_linear_scan_frequencies(self, rng, three_parts):
        """Test frequencies against p_i with a chi-square test"""
        draws = [three_parts.size_biased_index(rng) for _ in range(100000)]
        observed = np.bincount(draws, minlength=3)
        result = stats.chisquare(observed, 100000 * np.array(three_parts.parts))
        assert result.pvalue > 0.01

    def test_pair_frequencies(self, rng, three_parts):
        """Test ordered pair frequencies against p_i p_j"""
        draws = [size_biased_pair(three_parts, rng) for _ in range(100000)]
        observed = np.bincount([3 * i + j for i, j in draws], minlength=9)
        parts = np.array(three_parts.parts)
        result = stats.chisquare(observed, 100000 * np.outer(parts, parts).ravel())
        assert result.pvalue > 0.01

    def test_sub_unit_mass_normalized(self, rng):
        """Test that draws are proportional to p_i / |p| off the simplex"""
        p = Partition([0.3, 0.1])
        draws = np.array([p.size_biased_index(rng) for _ in range(20000)])
        share = float(np.mean(draws == 0))
        assert abs(share - 0.75) <= 4 * math.sqrt(0.75 * 0.25 / 20000)

    def test_alias_table_frequencies(self, rng):
        """Test the alias path on a partition above the alias threshold"""
        p = random_partition(rng, 100)
        draws = [p.size_biased_index(rng) for _ in range(50000)]
        groups = np.arange(p.count) // 10
        observed = np.bincount(groups[draws], minlength=10)
        expected = 50000 * np.bincount(groups, weights=np.array(p.parts), minlength=10)
        result = stats.chisquare(observed, expected)
        assert result.pvalue > 0.001

    def test_alias_table_degenerate(self, rng):
        """Test that an alias table over one dominant weight returns it"""
        table = AliasTable([1.0, 0.0, 0.0])
        assert {table.sample(rng) for _ in range(100)} == {0}
