import math

import numpy as np
import pytest

from corrslam.fixedpoint import (
    ONE,
    FixedPoint32,
    FixedScan,
    as_fixed_scan,
    from_fixed,
    reciprocal_fixed,
    sin_cos_fixed,
    to_fixed,
)
from corrslam.geometry import Scan


def test_fixed_point_conversions():
    assert FixedPoint32.from_real(1.5).raw == 98304
    assert FixedPoint32.from_real(-0.25).to_real() == -0.25
    assert np.array_equal(to_fixed([1.0, -2.0]), [ONE, -2 * ONE])
    assert np.allclose(from_fixed(to_fixed([0.1, 3.7])), [0.1, 3.7], atol=1.0 / ONE)


def test_fixed_point_overflow():
    with pytest.raises(OverflowError):
        FixedPoint32(1 << 31)
    with pytest.raises(OverflowError):
        to_fixed([40000.0])


def test_lut_sin_cos_accuracy():
    angles = np.linspace(-4 * math.pi, 4 * math.pi, 5001)
    s, c = sin_cos_fixed(to_fixed(angles))
    assert np.max(np.abs(s / ONE - np.sin(angles))) < 1e-4
    assert np.max(np.abs(c / ONE - np.cos(angles))) < 1e-4


def test_lut_exact_at_quarter_turns():
    s, c = sin_cos_fixed(to_fixed([0.0]))
    assert int(s[0]) == 0 and int(c[0]) == ONE


def test_reciprocal_keeps_common_resolutions_exact():
    assert reciprocal_fixed(0.05) == 20 * ONE
    assert reciprocal_fixed(0.1) == 10 * ONE
    assert reciprocal_fixed(0.025) == 40 * ONE


def test_fixed_scan_rounds_to_float32():
    scan = Scan([1.1, 2.2], [0.0, 0.3], timestamp=4.0)
    fixed = FixedScan.from_scan(scan)
    assert fixed.ranges32.dtype == np.float32
    assert len(fixed) == 2
    assert fixed.timestamp == 4.0
    assert np.array_equal(fixed.to_scan().ranges, np.float32([1.1, 2.2]).astype(np.float64))
    assert as_fixed_scan(fixed) is fixed
    assert fixed.max_range == pytest.approx(2.2, abs=1e-6)


def test_fixed_scan_length_mismatch():
    with pytest.raises(ValueError):
        FixedScan([1.0, 2.0], [0.0])
