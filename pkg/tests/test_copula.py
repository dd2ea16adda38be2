import numpy as np
import pytest

from infonet_mi.copula import empirical_copula, rank_transform
from infonet_mi.simdist import JointSequence

TRANSFORMS = {
    "cubic": lambda x: x ** 3 + x,
    "exp": np.exp,
    "asinh": np.arcsinh,
}


class TestRankTransform:
    def test_hand_example(self):
        np.testing.assert_array_equal(rank_transform([3.0, 1.0, 2.0]), [1.0, 1 / 3, 2 / 3])

    def test_ties_by_index(self):
        np.testing.assert_array_equal(rank_transform([5.0, 5.0]), [0.5, 1.0])

    def test_values_form_grid(self):
        x = np.random.default_rng(0).standard_normal(97)
        r = rank_transform(x)
        np.testing.assert_array_equal(np.sort(r), np.arange(1, 98) / 97)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            rank_transform([1.0, np.nan, 2.0])

    @pytest.mark.parametrize("name", TRANSFORMS)
    def test_monotone_invariance(self, name):
        x = np.random.default_rng(1).uniform(-3, 3, 500)
        a = rank_transform(x)
        b = rank_transform(TRANSFORMS[name](x))
        assert a.tobytes() == b.tobytes()


class TestEmpiricalCopula:
    def test_shapes_and_range(self):
        rng = np.random.default_rng(2)
        r = empirical_copula(JointSequence(rng.standard_normal(40), rng.standard_normal(40)))
        assert len(r) == r.T == 40
        assert r.us.min() > 0 and r.us.max() == 1.0

    def test_coordinates_independent(self):
        rng = np.random.default_rng(3)
        xs, ys = rng.standard_normal(30), rng.standard_normal(30)
        a = empirical_copula(JointSequence(xs, ys))
        b = empirical_copula(JointSequence(xs, np.exp(ys)))
        np.testing.assert_array_equal(a.us, b.us)
        np.testing.assert_array_equal(a.vs, b.vs)
