import numpy as np
import pytest

from fbsdej.errors import DimensionMismatchError, SizeLimitError, UnsupportedDimensionError
from fbsdej.measure import EmpiricalLaw, moments, w2_coupled_bound, w2_exact_1d, w2_exact_small


def cloud(*rows):
    return EmpiricalLaw(np.array(rows, dtype=float))


class TestEmpiricalLaw:
    def test_uniform_default_weights(self):
        law = cloud([0.0], [1.0], [2.0], [3.0])
        assert np.allclose(law.weights, 0.25)
        assert law.dim == 1 and law.size == 4

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            EmpiricalLaw(np.zeros((2, 1)), weights=np.array([0.6, 0.6]))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalLaw(np.zeros((2, 1)), weights=np.array([1.5, -0.5]))

    def test_empty_cloud_rejected(self):
        with pytest.raises(DimensionMismatchError):
            EmpiricalLaw(np.zeros((0, 1)))

    def test_points_frozen(self):
        law = cloud([1.0, 2.0])
        with pytest.raises(ValueError):
            law.points[0, 0] = 5.0


class TestCoupledBound:
    def test_identical_clouds(self):
        a = cloud([0.3, -1.0], [2.0, 0.5])
        assert w2_coupled_bound(a, a) == 0.0

    def test_single_point_masses(self):
        assert w2_coupled_bound(cloud([0.0]), cloud([1.0])) == 1.0

    def test_paired_two_points(self):
        # direct mean-square evaluation: sqrt((9 + 1)/2)
        a = cloud([0.0], [2.0])
        b = cloud([3.0], [1.0])
        assert w2_coupled_bound(a, b, paired=True) == pytest.approx(np.sqrt(5.0), abs=1e-15)

    def test_shape_errors(self):
        with pytest.raises(DimensionMismatchError):
            w2_coupled_bound(cloud([0.0]), cloud([0.0, 1.0]))
        with pytest.raises(DimensionMismatchError):
            w2_coupled_bound(cloud([0.0], [1.0]), cloud([
                0.0,
            ]))


class TestExact1d:
    def test_monotone_pairing_beats_crossed(self):
        # brute force over both pairings of {0,2} vs {1,3}:
        # monotone (0-1, 2-3) -> mean (1+1)/2 = 1; crossed -> (9+1)/2 = 5
        pairings = [np.sqrt((1 + 1) / 2), np.sqrt((9 + 1) / 2)]
        expected = min(pairings)
        got = w2_exact_1d(cloud([0.0], [2.0]), cloud([1.0], [3.0]))
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx(1.0, abs=1e-15)

    def test_identical_point(self):
        assert w2_exact_1d(cloud([5.0]), cloud([5.0])) == 0.0

    def test_translation(self):
        assert w2_exact_1d(cloud([0.0], [0.0]), cloud([1.0], [1.0])) == pytest.approx(1.0)

    def test_dimension_guard(self):
        with pytest.raises(UnsupportedDimensionError):
            w2_exact_1d(cloud([0.0, 0.0]), cloud([1.0, 1.0]))


class TestExactSmall:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(0)
        a = EmpiricalLaw(rng.normal(size=(10, 3)))
        assert w2_exact_small(a, a) == 0.0

    def test_permutation_invariance(self):
        a = cloud([0.0, 0.0], [1.0, 0.0])
        b = cloud([1.0, 0.0], [0.0, 0.0])
        assert w2_exact_small(a, b) == 0.0

    def test_single_point_euclidean(self):
        assert w2_exact_small(cloud([0.0, 0.0]), cloud([3.0, 4.0])) == pytest.approx(5.0)

    def test_size_cap(self):
        a = EmpiricalLaw(np.zeros((65, 1)))
        with pytest.raises(SizeLimitError):
            w2_exact_small(a, a)


class TestMoments:
    def test_symmetric_pair(self):
        mean, second = moments(cloud([-1.0], [1.0]))
        assert mean == pytest.approx(0.0) and second == pytest.approx(1.0)

    def test_point_mass_origin(self):
        mean, second = moments(cloud([0.0]))
        assert mean[0] == 0.0 and second == 0.0

    def test_hand_sum(self):
        mean, second = moments(cloud([1.0], [2.0], [3.0]))
        assert mean[0] == pytest.approx(2.0)
        assert second == pytest.approx(14.0 / 3.0)


class TestMetricProperties:
    """Randomized metric-axiom suite for the exact distances."""

    def _random_clouds(self, rng, n, d):
        return [EmpiricalLaw(rng.normal(size=(n, d))) for _ in range(3)]

    def test_symmetry_exact(self):
        rng = np.random.default_rng(101)
        for _ in range(50):
            a, b, _ = self._random_clouds(rng, 8, 2)
            assert w2_exact_small(a, b) == w2_exact_small(b, a)
        for _ in range(50):
            a, b, _ = self._random_clouds(rng, 9, 1)
            assert w2_exact_1d(a, b) == w2_exact_1d(b, a)

    def test_identity_of_indiscernibles(self):
        rng = np.random.default_rng(102)
        for _ in range(30):
            pts = rng.normal(size=(7, 2))
            a = EmpiricalLaw(pts)
            b = EmpiricalLaw(pts[rng.permutation(7)])
            assert w2_exact_small(a, b) <= 1e-12
            c = EmpiricalLaw(pts + 0.1)
            assert w2_exact_small(a, c) > 1e-3

    def test_triangle_inequality(self):
        rng = np.random.default_rng(103)
        for _ in range(200):
            a, b, c = self._random_clouds(rng, 6, 2)
            ab = w2_exact_small(a, b)
            bc = w2_exact_small(b, c)
            ac = w2_exact_small(a, c)
            assert ac <= ab + bc + 1e-9

    def test_coupled_bound_dominates(self):
        rng = np.random.default_rng(104)
        for _ in range(200):
            a = EmpiricalLaw(rng.normal(size=(10, 2)))
            b = EmpiricalLaw(rng.normal(size=(10, 2)))
            assert w2_exact_small(a, b) <= w2_coupled_bound(a, b) + 1e-12

    def test_small_matches_1d(self):
        rng = np.random.default_rng(105)
        for _ in range(100):
            a = EmpiricalLaw(rng.normal(size=(12, 1)))
            b = EmpiricalLaw(rng.normal(size=(12, 1)))
            assert w2_exact_small(a, b) == pytest.approx(w2_exact_1d(a, b), abs=1e-12)
