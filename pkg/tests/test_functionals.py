"""
Tests for functionals on partitions
"""
import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import PartitionError
from core.functionals import (
    Constant,
    NPolynomial,
    PartCount,
    Power,
    Product,
    ThresholdCount,
    ThresholdMass,
    TopProduct,
    ZMoment,
    parse_functional,
    parse_functionals,
)
from core.partition import Partition, random_partition


@pytest.fixture
def states():
    rng = np.random.default_rng(11)
    return [Partition.single()] + [random_partition(rng, n) for n in (2, 3, 5, 8)]


class TestParsing:
    """Tests for functional names"""

    @pytest.mark.parametrize("text,cls,name", [
        ("Z2", ZMoment, "Z2"),
        ("p1", TopProduct, "p1"),
        ("p1p2", TopProduct, "p1p2"),
        ("X0", PartCount, "X0"),
        ("X0.1", ThresholdCount, "X0.1"),
        ("M0.25", ThresholdMass, "M0.25"),
        ("P:2,1", NPolynomial, "P2,1"),
        ("Z2^2", Power, "Z2^2"),
        ("one", Constant, "const1"),
    ])
    def test_parse(self, text, cls, name):
        """Test that each name parses to its class"""
        f = parse_functional(text)
        assert isinstance(f, cls)
        assert f.name == name

    def test_top_product_depth(self):
        """Test order depth of top products"""
        assert parse_functional("p1p2p3").order_depth == 3
        assert parse_functional("Z3").order_depth == 0

    def test_gapped_top_product_rejected(self):
        """Test that p1p3 is not a top product"""
        with pytest.raises(PartitionError):
            parse_functional("p1p3")

    def test_unknown_rejected(self):
        """Test that unknown names raise"""
        with pytest.raises(PartitionError):
            parse_functional("entropy")

    def test_parse_list(self):
        """Test parsing several names at once"""
        assert [f.name for f in parse_functionals(["Z2", "p1"])] == ["Z2", "p1"]


class TestEvaluation:
    """Tests for scalar and batch evaluation"""

    def test_values(self):
        """Test scalar values on a known state"""
        p = Partition([0.5, 0.3, 0.2])
        assert parse_functional("Z2").value(p) == pytest.approx(0.38)
        assert parse_functional("p1p2").value(p) == pytest.approx(0.15)
        assert parse_functional("X0").value(p) == 3.0
        assert parse_functional("X0.25").value(p) == 2.0
        assert parse_functional("Z2^2").value(p) == pytest.approx(0.38 ** 2)

    def test_top_product_short_state(self):
        """Test that missing parts count as zero"""
        assert TopProduct(2).value(Partition.single()) == 0.0

    @pytest.mark.parametrize("text", ["Z2", "Z3", "p1", "p1p2", "X0", "X0.1", "M0.1", "P:2,1", "Z2^2", "mass"])
    def test_batch_matches_value(self, text, states):
        """Test that batch rows give the scalar values"""
        f = parse_functional(text)
        width = max(p.count for p in states) + 1
        rows = np.vstack([p.padded(width) for p in states])
        expected = [f.value(p) for p in states]
        assert f.batch(rows) == pytest.approx(expected, rel=1e-12)

    def test_product_operator(self):
        """Test that * builds a product"""
        f = ZMoment(2) * TopProduct(1)
        assert isinstance(f, Product)
        assert f.order_depth == 1
        assert f.value(Partition([0.5, 0.5])) == pytest.approx(0.25)

    def test_threshold_breakpoints(self):
        """Test split fractions where a piece crosses the threshold"""
        f = ThresholdCount(0.1)
        assert f.split_breakpoints(0.4) == pytest.approx((0.25, 0.75))
        assert f.split_breakpoints(0.05) == ()

    def test_threshold_mass_value(self):
        """Test that only parts above eps carry mass"""
        f = ThresholdMass(0.25)
        assert f.value(Partition([0.5, 0.3, 0.2])) == pytest.approx(0.8)
        assert f.value(Partition([0.25, 0.25, 0.25, 0.25])) == 0.0
        assert f.split_breakpoints(0.5) == pytest.approx((0.5, 0.5))
        with pytest.raises(PartitionError):
            ThresholdMass(-0.1)

    def test_invalid_multiplicity(self):
        """Test that P_n validates its multiplicities"""
        with pytest.raises(PartitionError):
            NPolynomial([1, 0])
