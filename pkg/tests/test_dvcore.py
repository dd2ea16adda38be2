import math

import numpy as np
import pytest

from infonet_mi.autodiff import Tensor
from infonet_mi.copula import RankedSequence, empirical_copula
from infonet_mi.dvcore import (
    DiscriminantTable,
    dv_value,
    dv_value_averaged,
    dv_value_exact,
    logmeanexp,
    lookup,
    mi_loss_batch,
    optimal_table_discrete,
    shuffle_marginal,
)
from infonet_mi.simdist import gaussian_spec, sample_joint

from gradcheck import check


def _random_joint(rng, L=8, sparsity=0.0):
    p = rng.random((L, L)) ** 3
    if sparsity:
        p[rng.random((L, L)) < sparsity] = 0.0
        p[0, 0] += 1e-3
    return p / p.sum()


def _exact_mi(p):
    q = p.sum(1, keepdims=True) * p.sum(0, keepdims=True)
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


class TestLookup:
    def test_centre_of_2x2(self):
        t = DiscriminantTable(np.array([[0.0, 1.0], [2.0, 3.0]]))
        assert lookup(t, 0.5, 0.5) == pytest.approx(1.5)

    def test_exact_at_cell_centres(self):
        L = 6
        vals = np.arange(L * L, dtype=float).reshape(L, L)
        t = DiscriminantTable(vals)
        c = (np.arange(L) + 0.5) / L
        U, V = np.meshgrid(c, c, indexing="ij")
        np.testing.assert_allclose(lookup(t, U.ravel(), V.ravel()), vals.ravel(), atol=1e-12)

    def test_clamped_corners(self):
        vals = np.random.default_rng(0).standard_normal((5, 5))
        t = DiscriminantTable(vals)
        assert lookup(t, 0.0, 0.0) == pytest.approx(vals[0, 0])
        assert lookup(t, 1.0, 1.0) == pytest.approx(vals[-1, -1])
        assert lookup(t, 0.0, 1.0) == pytest.approx(vals[0, -1])

    def test_constant_table(self):
        t = DiscriminantTable(np.full((4, 4), 2.5))
        u = np.random.default_rng(1).random(100)
        np.testing.assert_allclose(lookup(t, u, u[::-1]), 2.5)

    def test_out_of_range(self):
        t = DiscriminantTable(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            lookup(t, 1.5, 0.5)

    @pytest.mark.parametrize("shape", [(3,), (1, 1), (2, 3), (0, 0)])
    def test_bad_table_shape(self, shape):
        with pytest.raises(ValueError):
            DiscriminantTable(np.zeros(shape))

    def test_non_finite_table(self):
        with pytest.raises(ValueError):
            DiscriminantTable(np.array([[0.0, np.inf], [0.0, 0.0]]))


class TestDvValue:
    def test_zero_table_gives_zero(self):
        r = empirical_copula(sample_joint(gaussian_spec(0.5), 200, np.random.default_rng(0)))
        t = DiscriminantTable(np.zeros((8, 8)))
        assert dv_value(t, r, shuffle_marginal(r.vs, np.random.default_rng(1))) == 0.0

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(2)
        r = empirical_copula(sample_joint(gaussian_spec(0.7), 300, rng))
        vals = rng.standard_normal((8, 8))
        marg = shuffle_marginal(r.vs, rng)
        a = dv_value(DiscriminantTable(vals), r, marg)
        b = dv_value(DiscriminantTable(vals + 3.7), r, marg)
        assert a == pytest.approx(b, abs=1e-12)

    def test_length_mismatch(self):
        r = RankedSequence(np.array([0.5, 1.0]), np.array([1.0, 0.5]))
        with pytest.raises(ValueError):
            dv_value(DiscriminantTable(np.zeros((2, 2))), r, np.array([0.5]))

    def test_averaged_needs_shuffles(self):
        r = RankedSequence(np.array([0.5, 1.0]), np.array([1.0, 0.5]))
        with pytest.raises(ValueError):
            dv_value_averaged(DiscriminantTable(np.zeros((2, 2))), r, np.random.default_rng(0), 0)

    def test_logmeanexp_stable(self):
        assert logmeanexp(np.array([1000.0, 1000.0])) == pytest.approx(1000.0)
        assert logmeanexp(np.log(np.array([1.0, 3.0]))) == pytest.approx(math.log(2.0))


class TestShuffle:
    def test_is_permutation(self):
        v = np.arange(50) / 50
        s = shuffle_marginal(v, np.random.default_rng(0))
        np.testing.assert_array_equal(np.sort(s), v)

    def test_deterministic(self):
        v = np.arange(50.0)
        a = shuffle_marginal(v, np.random.default_rng(3))
        b = shuffle_marginal(v, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_uniform_over_permutations(self):
        rng = np.random.default_rng(4)
        counts = {}
        for _ in range(6000):
            k = tuple(shuffle_marginal(np.arange(3), rng))
            counts[k] = counts.get(k, 0) + 1
        assert len(counts) == 6
        assert all(abs(c - 1000) < 150 for c in counts.values())


class TestDiscreteOracle:
    @pytest.mark.parametrize("seed", range(10))
    def test_optimal_table_attains_mi(self, seed):
        p = _random_joint(np.random.default_rng(seed))
        table, mi = optimal_table_discrete(p)
        assert mi == pytest.approx(_exact_mi(p), abs=1e-12)
        assert dv_value_exact(table, p) == pytest.approx(mi, abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_perturbations_never_exceed(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = _random_joint(rng, sparsity=0.3)
        table, mi = optimal_table_discrete(p)
        for _ in range(50):
            pert = DiscriminantTable(table.values + rng.normal(0, rng.uniform(0.01, 2), p.shape))
            assert dv_value_exact(pert, p) <= mi + 1e-9

    def test_independent_joint(self):
        px = np.array([0.2, 0.3, 0.5])
        table, mi = optimal_table_discrete(np.outer(px, px[::-1]))
        assert mi == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(table.values, 0.0, atol=1e-12)

    def test_diagonal_joint(self):
        table, mi = optimal_table_discrete(np.eye(4) / 4)
        assert mi == pytest.approx(math.log(4))
        assert dv_value_exact(table, np.eye(4) / 4) == pytest.approx(math.log(4), abs=1e-10)

    @pytest.mark.parametrize("p", [np.full((3, 3), 0.2), np.array([[0.6, -0.1], [0.25, 0.25]]), np.ones(4) / 4])
    def test_invalid_probs(self, p):
        with pytest.raises(ValueError):
            optimal_table_discrete(p)


class TestMiLossBatch:
    def _batch(self, n, T, seed):
        rng = np.random.default_rng(seed)
        return [empirical_copula(sample_joint(gaussian_spec(rng.uniform(-0.9, 0.9)), T, rng))
                for _ in range(n)]

    def test_gradient_matches_finite_differences(self):
        joints = self._batch(3, 40, 0)
        tables = np.random.default_rng(1).standard_normal((3, 5, 5))
        f = lambda t: mi_loss_batch(t, joints, np.random.default_rng(7))
        assert check(f, [tables]) <= 1e-4

    def test_equals_mean_of_dv_values(self):
        joints = self._batch(4, 60, 2)
        tables = np.random.default_rng(3).standard_normal((4, 6, 6))
        got = float(mi_loss_batch(Tensor(tables), joints, np.random.default_rng(9)).data)
        rng = np.random.default_rng(9)
        margs = [shuffle_marginal(j.vs, rng) for j in joints]
        want = np.mean([dv_value(DiscriminantTable(t), j, m) for t, j, m in zip(tables, joints, margs)])
        assert got == pytest.approx(want, abs=1e-12)

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            mi_loss_batch(Tensor(np.zeros((2, 4, 4))), self._batch(3, 10, 0), np.random.default_rng(0))

    def test_ragged_lengths(self):
        joints = self._batch(1, 10, 0) + self._batch(1, 12, 1)
        with pytest.raises(ValueError):
            mi_loss_batch(Tensor(np.zeros((2, 4, 4))), joints, np.random.default_rng(0))
