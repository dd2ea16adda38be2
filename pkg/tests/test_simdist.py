import math

import numpy as np
import pytest
from scipy import stats

from infonet_mi.simdist import (
    GenerationError,
    GmmSpec,
    JointSequence,
    additive_noise_mi,
    gaussian_mi_analytic,
    gaussian_spec,
    gen_highdim_pair,
    gen_leveled_eval_set,
    gmm_logpdf,
    gmm_marginals,
    halfcube,
    mci_mi,
    sample_additive_noise,
    sample_gmm_spec,
    sample_joint,
    transform_family,
)


class TestSampleGmmSpec:
    def test_protocol_ranges(self):
        spec = sample_gmm_spec(20, 2, np.random.default_rng(0))
        assert 1 <= spec.K <= 20
        assert np.all(np.abs(spec.means) <= 5)

    def test_single_component(self):
        for s in range(20):
            assert sample_gmm_spec(1, 2, np.random.default_rng(s)).K == 1

    def test_invariants_over_many_seeds(self):
        ks = set()
        for s in range(1000):
            spec = sample_gmm_spec(20, 2, np.random.default_rng(s))
            ks.add(spec.K)
            assert abs(spec.weights.sum() - 1) <= 1e-12 and np.all(spec.weights >= 0)
            np.testing.assert_array_equal(spec.covs, np.swapaxes(spec.covs, 1, 2))
            assert np.linalg.eigvalsh(spec.covs).min() >= 0.01 - 1e-9
        assert ks == set(range(1, 21))

    @pytest.mark.parametrize("bad", [dict(max_components=0, dim=2), dict(max_components=3, dim=1)])
    def test_bad_arguments(self, bad):
        with pytest.raises(ValueError):
            sample_gmm_spec(rng=np.random.default_rng(0), **bad)

    def test_rejects_invalid_spec(self):
        with pytest.raises(ValueError):
            GmmSpec(np.array([0.5, 0.6]), np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
        with pytest.raises(ValueError):
            GmmSpec(np.ones(1), np.zeros((1, 2)), np.array([[[1.0, 2.0], [2.0, 1.0]]]))


class TestSampleJoint:
    def test_standard_normal_moments(self):
        seq = sample_joint(gaussian_spec(0.0), 100_000, np.random.default_rng(1))
        assert abs(seq.xs.mean()) < 0.02 and abs(seq.ys.mean()) < 0.02
        assert abs(np.corrcoef(seq.xs, seq.ys)[0, 1]) < 0.02

    def test_length_two(self):
        assert len(sample_joint(gaussian_spec(0.3), 2, np.random.default_rng(0))) == 2

    def test_deterministic(self):
        spec = sample_gmm_spec(20, 2, np.random.default_rng(5))
        a = sample_joint(spec, 50, np.random.default_rng(9))
        b = sample_joint(spec, 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a.xs, b.xs)
        np.testing.assert_array_equal(a.ys, b.ys)

    def test_joint_sequence_validation(self):
        with pytest.raises(ValueError):
            JointSequence(np.array([1.0]), np.array([2.0]))
        with pytest.raises(ValueError):
            JointSequence(np.array([1.0, np.nan]), np.array([2.0, 3.0]))
        with pytest.raises(ValueError):
            JointSequence(np.arange(3.0), np.arange(4.0))


class TestGaussianAnalytic:
    @pytest.mark.parametrize("rho,expected", [(0.0, 0.0), (0.5, 0.14384), (0.9, 0.830366)])
    def test_values(self, rho, expected):
        assert gaussian_mi_analytic(rho).mi_nats == pytest.approx(expected, abs=5e-6)

    def test_infinite_rejected(self):
        with pytest.raises(ValueError):
            gaussian_mi_analytic(1.0)


class TestLogpdf:
    def test_standard_normal_origin(self):
        spec = GmmSpec(np.ones(1), np.zeros((1, 2)), np.eye(2)[None])
        assert gmm_logpdf(spec, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_duplicate_components(self):
        single = gaussian_spec(0.4, 1.3, 0.7)
        double = GmmSpec(np.array([0.3, 0.7]), np.repeat(single.means, 2, 0), np.repeat(single.covs, 2, 0))
        pts = np.random.default_rng(0).standard_normal((50, 2)) * 3
        np.testing.assert_allclose(gmm_logpdf(double, pts), gmm_logpdf(single, pts), rtol=0, atol=1e-12)

    def test_distant_point_finite(self):
        spec = sample_gmm_spec(20, 2, np.random.default_rng(3))
        v = gmm_logpdf(spec, np.array([100.0, -100.0]))
        assert np.isfinite(v) and v < -10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gmm_logpdf(gaussian_spec(0.1), np.zeros(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scipy_mixture(self, seed):
        rng = np.random.default_rng(seed)
        spec = sample_gmm_spec(20, 2, rng)
        pts = rng.uniform(-8, 8, (30, 2))
        dens = sum(w * stats.multivariate_normal(m, c).pdf(pts)
                   for w, m, c in zip(spec.weights, spec.means, spec.covs))
        np.testing.assert_allclose(gmm_logpdf(spec, pts), np.log(dens), rtol=1e-9, atol=1e-9)


class TestMarginals:
    def test_diagonal_slices(self):
        spec = GmmSpec(np.ones(1), np.zeros((1, 2)), np.array([[[4.0, 1.0], [1.0, 9.0]]]))
        mx, my = gmm_marginals(spec)
        assert mx.covs[0, 0, 0] == 4.0 and my.covs[0, 0, 0] == 9.0

    def test_product_factorization(self):
        spec = gaussian_spec(0.0, 2.0, 0.5, mean=(1.0, -1.0))
        mx, my = gmm_marginals(spec)
        pts = np.random.default_rng(0).standard_normal((40, 2))
        np.testing.assert_allclose(gmm_logpdf(spec, pts),
                                   gmm_logpdf(mx, pts[:, :1]) + gmm_logpdf(my, pts[:, 1:]), atol=1e-12)

    def test_weights_preserved(self):
        spec = sample_gmm_spec(20, 2, np.random.default_rng(11))
        for m in gmm_marginals(spec):
            np.testing.assert_array_equal(m.weights, spec.weights)


class TestMci:
    def test_independent_product(self):
        gt = mci_mi(gaussian_spec(0.0, 1.5, 0.3), 20_000, np.random.default_rng(0))
        assert abs(gt.mi_nats) <= 3 * gt.stderr + 1e-12

    def test_gaussian_rho_06(self):
        gt = mci_mi(gaussian_spec(0.6), 200_000, np.random.default_rng(1))
        assert abs(gt.mi_nats - (-0.5 * math.log(0.64))) <= 3 * gt.stderr
        assert gt.method == "mci"

    def test_stderr_shrinks_like_sqrt2(self):
        spec = sample_gmm_spec(5, 2, np.random.default_rng(2))
        ratios = []
        for t in range(20):
            a = mci_mi(spec, 4000, np.random.default_rng(100 + t)).stderr
            b = mci_mi(spec, 8000, np.random.default_rng(200 + t)).stderr
            ratios.append(a / b)
        assert 1.2 <= np.mean(ratios) <= 1.7

    def test_agrees_with_analytic_on_random_gaussians(self):
        hits = 0
        for s in range(20):
            spec = sample_gmm_spec(1, 2, np.random.default_rng(s))
            c = spec.covs[0]
            rho = c[0, 1] / math.sqrt(c[0, 0] * c[1, 1])
            gt = mci_mi(spec, 50_000, np.random.default_rng(1000 + s))
            hits += abs(gt.mi_nats - gaussian_mi_analytic(rho).mi_nats) <= 3 * gt.stderr
        assert hits >= 19

    def test_min_samples(self):
        with pytest.raises(ValueError):
            mci_mi(gaussian_spec(0.1), 10, np.random.default_rng(0))


class TestLeveledSet:
    def test_single_near_independent(self):
        recs = gen_leveled_eval_set([0.0], 0.02, 1, 100, np.random.default_rng(0), n_mci=20_000)
        assert len(recs) == 1 and abs(recs[0].gt.mi_nats) <= 0.02 and len(recs[0].seq) == 100

    def test_records_within_tolerance_and_deterministic(self):
        kw = dict(levels=[0.1, 0.3], tol=0.02, per_level=2, T=64, n_mci=20_000)
        a = gen_leveled_eval_set(rng=np.random.default_rng(4), **kw)
        b = gen_leveled_eval_set(rng=np.random.default_rng(4), **kw)
        assert [r.level for r in a] == [0.1, 0.1, 0.3, 0.3]
        for r in a:
            assert abs(r.gt.mi_nats - r.level) <= 0.02
        assert [r.seed for r in a] == [r.seed for r in b]
        np.testing.assert_array_equal(a[0].seq.xs, b[0].seq.xs)

    def test_rejection_cap(self):
        with pytest.raises(GenerationError, match="level 50"):
            gen_leveled_eval_set([50.0], 0.01, 1, 10, np.random.default_rng(0), rejection_cap=5,
                                 n_mci=2000)


class TestFamilies:
    def test_halfcube_keeps_gaussian_gt(self):
        gt = gaussian_mi_analytic(0.5)
        seq = sample_joint(gaussian_spec(0.5), 100, np.random.default_rng(0))
        out = transform_family(seq, "halfcube")
        assert np.all(np.diff(halfcube(np.sort(seq.xs))) > 0)
        assert gt.mi_nats == pytest.approx(0.14384, abs=5e-6)
        assert np.array_equal(np.argsort(out.xs), np.argsort(seq.xs))

    def test_asinh_monotone(self):
        g = np.linspace(-50, 50, 1000)
        assert np.arcsinh(0.0) == 0.0
        assert np.all(np.diff(np.arcsinh(g)) > 0)

    def test_additive_noise_quadrature(self):
        eps = 0.1
        # h(Y) in closed form for the trapezoid density: the flat top gives 0,
        # each ramp of width 2 eps gives 2 eps * int_0^1 -u ln u du = eps / 2
        h_y = 2 * (eps / 2)
        expected = h_y - math.log(2 * eps)
        assert additive_noise_mi(eps) == pytest.approx(expected, abs=1e-6)
        seq, gt = sample_additive_noise(eps, 50, np.random.default_rng(0))
        assert gt.mi_nats == pytest.approx(expected, abs=1e-6) and len(seq) == 50

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            sample_additive_noise(0.0, 10, np.random.default_rng(0))


class TestHighDim:
    def test_indep_coords_correlation(self):
        X, Y = gen_highdim_pair("indep_coords", 4, 10_000, True, np.random.default_rng(0))
        for i in range(4):
            assert abs(np.corrcoef(X[:, i], Y[:, i])[0, 1] - 1 / math.sqrt(2)) < 0.05

    def test_independent_correlation(self):
        X, Y = gen_highdim_pair("one_feature", 4, 10_000, False, np.random.default_rng(1))
        for i in range(4):
            assert abs(np.corrcoef(X[:, i], Y[:, i])[0, 1]) < 0.05

    def test_one_feature_unit_variance(self):
        _, Y = gen_highdim_pair("one_feature", 6, 10_000, True, np.random.default_rng(2))
        np.testing.assert_allclose(Y.var(axis=0), 1.0, atol=0.05)

    def test_two_features_needs_even_d(self):
        with pytest.raises(ValueError):
            gen_highdim_pair("two_features", 5, 10, True, np.random.default_rng(0))
