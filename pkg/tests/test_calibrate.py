import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgssl.calibrate import (
    CalibrationMap,
    apply_binning,
    binning_objective,
    ece,
    entropy_uncertainty,
    fit_binning,
    uniform_boundaries,
)

MIDS = (np.arange(10) + 0.5) / 10


class TestFit:
    def test_single_sample(self):
        m = fit_binning([0.05], [1], 10)
        assert m.theta[0] == 1.0
        np.testing.assert_allclose(m.theta[1:], MIDS[1:])

    def test_hand_counted_bin(self):
        assert fit_binning([0.15, 0.12], [1, 0], 10).theta[1] == 0.5

    def test_zero_goes_to_first_bin(self):
        assert fit_binning([0.0], [1], 10).theta[0] == 1.0

    def test_upper_boundaries_are_inclusive(self):
        m = fit_binning([0.1, 0.2, 1.0], [1, 0, 1], 10)
        assert m.theta[0] == 1.0 and m.theta[1] == 0.0 and m.theta[9] == 1.0

    @pytest.mark.parametrize("k", range(1, 10))
    def test_every_interior_boundary(self, k):
        b = k / 10
        assert CalibrationMap(uniform_boundaries(10), MIDS).bin_index(b) == k - 1

    def test_local_optimality(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = rng.uniform(0, 1, 200)
            y = (rng.uniform(0, 1, 200) < s).astype(float)
            m = fit_binning(s, y, 10)
            base = binning_objective(m, s, y)
            for i in range(10):
                for d in (-0.01, 0.01):
                    th = m.theta.copy()
                    th[i] += d
                    assert binning_objective(CalibrationMap(m.boundaries, th), s, y) >= base

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_binning([0.1, 0.2], [1], 10)
        with pytest.raises(ValueError):
            fit_binning([], [], 10)
        with pytest.raises(ValueError):
            fit_binning([1.2], [1], 10)
        with pytest.raises(ValueError):
            fit_binning([0.5], [1], 0)

    def test_json_round_trip(self, tmp_path):
        m = fit_binning([0.3, 0.7, 0.71], [0, 1, 0], 5)
        m.save(tmp_path / "m.json")
        n = CalibrationMap.load(tmp_path / "m.json")
        np.testing.assert_array_equal(n.theta, m.theta)
        np.testing.assert_array_equal(n.boundaries, m.boundaries)


class TestApply:
    def test_midpoint_map(self):
        m = CalibrationMap(uniform_boundaries(10), MIDS)
        assert apply_binning(m, 0.55) == pytest.approx(0.55)

    def test_boundary_to_lower_bin(self):
        m = CalibrationMap(uniform_boundaries(10), MIDS)
        assert apply_binning(m, 0.1) == MIDS[0]

    def test_out_of_range(self):
        m = CalibrationMap(uniform_boundaries(10), MIDS)
        with pytest.raises(ValueError):
            apply_binning(m, -0.01)
        with pytest.raises(ValueError):
            apply_binning(m, np.array([0.5, 1.01]))

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=50))
    def test_monotone_map_preserves_order(self, scores):
        theta = np.sort(np.random.default_rng(len(scores)).uniform(0, 1, 10))
        m = CalibrationMap(uniform_boundaries(10), theta)
        s = np.array(scores)
        out = apply_binning(m, s)
        r, c = np.nonzero(s[:, None] <= s[None, :])
        assert np.all(out[r] <= out[c])

    def test_fit_then_apply_matches_positive_fraction(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(0, 1, 5000)
        y = (rng.uniform(0, 1, 5000) < s**2).astype(float)
        m = fit_binning(s, y, 10)
        cal = apply_binning(m, s)
        idx = m.bin_index(s)
        for b in range(10):
            sel = idx == b
            assert abs(cal[sel].mean() - y[sel].mean()) <= 1e-12
        assert ece(cal, y, 10, bin_by=s) == 0.0


class TestEntropy:
    def test_fixed_points(self):
        assert entropy_uncertainty(0.0) == 0.0
        assert entropy_uncertainty(1.0) == 0.0
        assert entropy_uncertainty(0.5) == 1.0
        assert entropy_uncertainty(0.9) == pytest.approx(0.46900, abs=1e-5)

    @given(st.floats(0, 1))
    def test_symmetry(self, s):
        assert entropy_uncertainty(s) == pytest.approx(entropy_uncertainty(1 - s), abs=1e-12)

    def test_strict_monotone_halves(self):
        lo = entropy_uncertainty(np.linspace(0, 0.5, 501))
        hi = entropy_uncertainty(np.linspace(0.5, 1, 501))
        assert np.all(np.diff(lo) > 0) and np.all(np.diff(hi) < 0)

    def test_range_and_errors(self):
        u = entropy_uncertainty(np.linspace(0, 1, 101))
        assert u.min() >= 0 and u.max() <= 1
        with pytest.raises(ValueError):
            entropy_uncertainty(1.5)


class TestEce:
    def test_calibrated_monte_carlo(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(0, 1, 100_000)
        y = (rng.uniform(0, 1, s.size) < s).astype(float)
        assert ece(s, y) < 0.02

    def test_single_bin_arithmetic(self):
        assert ece(np.ones(10), np.r_[np.ones(5), np.zeros(5)]) == 0.5

    def test_hand_example(self):
        # bins (0.1,0.2] and (0.8,0.9]: |0 - 0.15| * 0.5 + |1 - 0.85| * 0.5
        assert ece([0.15, 0.85], [0, 1]) == pytest.approx(0.15)

    def test_errors(self):
        with pytest.raises(ValueError):
            ece([], [])
        with pytest.raises(ValueError):
            ece([0.5], [1, 0])


def test_log_base_two():
    s = 0.3
    assert entropy_uncertainty(s) == pytest.approx(-(s * math.log2(s) + (1 - s) * math.log2(1 - s)))
