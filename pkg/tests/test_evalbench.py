import json
import math

import numpy as np
import pytest

from infonet_mi import evalbench as eb
from infonet_mi.simdist import JointSequence, gaussian_mi_analytic, gen_leveled_eval_set, sample_gmm_spec


def oracle_by_lookup(table):
    """Estimator returning the known gt for sequences registered in ``table``."""
    return eb.NamedEstimator("oracle", lambda s, seed: table[s.xs.tobytes()])


class TestRocAuc:
    def test_derived_example(self):
        assert eb.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_perfect(self):
        assert eb.roc_auc([0.0, 0.1, 0.9, 1.0], [0, 0, 1, 1]) == 1.0

    def test_all_equal(self):
        assert eb.roc_auc(np.ones(10), [0, 1] * 5) == 0.5

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = rng.integers(0, 5, 30).astype(float)
            y = rng.integers(0, 2, 30)
            y[:2] = [0, 1]
            pos, neg = s[y == 1], s[y == 0]
            brute = np.mean([1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg])
            assert eb.roc_auc(s, y) == pytest.approx(brute, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(ValueError):
            eb.roc_auc([0.1, 0.2], [1, 1])


class TestEvalRecord:
    def test_negative_time(self):
        with pytest.raises(ValueError):
            eb.EvalRecord("e", "d", 0.1, 0.2, -1.0, 0)

    def test_non_finite_estimate(self):
        with pytest.raises(ValueError):
            eb.EvalRecord("e", "d", 0.1, math.inf, 0.0, 0)


class TestSanity:
    def test_gt_column_and_summary(self):
        ksg = eb.make_estimator("ksg")
        rep = eb.sanity_gaussian_suite([ksg], [0.0, 0.5], 300, [0, 1, 2])
        assert len(rep.records) == 6
        for r in rep.records:
            rho = 0.0 if "+0.00" in r.distribution else 0.5
            assert r.gt_mi_nats == gaussian_mi_analytic(rho).mi_nats
        row0 = rep.summary["estimators"]["ksg"]["rows"][0]
        assert abs(row0["mean_estimate"]) < 0.08
        assert rep.summary["estimators"]["ksg"]["runtime_seconds"] >= 0

    def test_same_data_for_all_estimators(self):
        seen = {}

        def spy(name):
            return eb.NamedEstimator(name, lambda s, seed: seen.setdefault(name, []).append(s.xs.sum()) or 0.0)

        eb.sanity_gaussian_suite([spy("a"), spy("b")], [0.3], 50, [4, 5])
        assert seen["a"] == seen["b"]

    def test_bad_rho(self):
        with pytest.raises(ValueError):
            eb.sanity_gaussian_suite([eb.make_estimator("ksg")], [1.0], 50, [0])


@pytest.fixture(scope="module")
def items():
    recs = gen_leveled_eval_set([0.1, 0.3], 0.02, 3, 60, np.random.default_rng(0), n_mci=20_000)
    return eb.bin_items_from_records(recs)


@pytest.fixture(scope="module")
def triplets():
    return {K: eb.gen_triplets(8, K, 100, seed=1, n_mci=20_000) for K in (1, 3)}


class TestBins:
    def test_oracle_zero_error(self, items):
        table = {it.seq.xs.tobytes(): it.gt_mi_nats for it in items}
        rep = eb.binned_error_suite(items, [oracle_by_lookup(table)])
        for cell in rep.summary["table"]["oracle"].values():
            assert cell["mean_error"] == 0.0 and cell["variance"] == 0.0 and cell["n"] == 3

    def test_zero_estimator(self, items):
        zero = eb.NamedEstimator("zero", lambda s, seed: 0.0)
        rep = eb.binned_error_suite(items, [zero])
        for cell in rep.summary["table"]["zero"].values():
            lv = [it.gt_mi_nats for it in items if it.level == cell["level"]]
            assert cell["mean_error"] == pytest.approx(-np.mean(lv), abs=1e-12)
            assert abs(cell["mean_error"] + cell["level"]) <= 0.02

    def test_empty_level(self, items):
        with pytest.raises(ValueError, match="0.5"):
            eb.binned_error_suite(items, [eb.NamedEstimator("z", lambda s, seed: 0.0)], levels=[0.1, 0.5])


class TestOrder:
    def test_labels_unambiguous(self, triplets):
        for trip in triplets.values():
            for t in trip:
                assert abs(t.gt_xy - t.gt_xy2) > 2 * (t.stderr_xy + t.stderr_xy2)
                assert t.xs.shape == t.ys.shape == t.ys2.shape == (100,)

    def test_oracle_and_anti_oracle(self, triplets):
        gt = {}
        for trip in triplets.values():
            for t in trip:
                gt[(t.xs.tobytes(), t.ys.tobytes())] = t.gt_xy
                gt[(t.xs.tobytes(), t.ys2.tobytes())] = t.gt_xy2
        oracle = eb.NamedEstimator("oracle", lambda s, seed: gt[(s.xs.tobytes(), s.ys.tobytes())])
        anti = eb.NamedEstimator("anti", lambda s, seed: -gt[(s.xs.tobytes(), s.ys.tobytes())])
        rep = eb.order_accuracy_suite([oracle, anti], [1, 3], 8, 100, triplets=triplets)
        assert rep.summary["accuracy"]["oracle"] == {"1": 1.0, "3": 1.0}
        assert rep.summary["accuracy"]["anti"] == {"1": 0.0, "3": 0.0}

    def test_ties_are_wrong(self, triplets):
        const = eb.NamedEstimator("const", lambda s, seed: 0.3)
        acc, _, _ = eb.order_accuracy(triplets[1], const)
        assert acc == 0.0

    def test_shared_x_spec_structure(self):
        rng = np.random.default_rng(4)
        spec = eb.shared_x_spec(6, rng)
        # replay the two 2-d joints the construction draws
        rng = np.random.default_rng(4)
        a = sample_gmm_spec(6, 2, rng, n_components=6)
        b = sample_gmm_spec(6, 2, rng, n_components=6)
        xy, xy2 = spec.marginal([0, 1]), spec.marginal([0, 2])
        np.testing.assert_array_equal(xy.covs, a.covs)
        np.testing.assert_array_equal(xy.means, a.means)
        np.testing.assert_array_equal(xy2.means[:, 0], a.means[:, 0])
        np.testing.assert_array_equal(xy2.means[:, 1], b.means[:, 1])
        corr = lambda c: c[:, 0, 1] / np.sqrt(c[:, 0, 0] * c[:, 1, 1])
        np.testing.assert_allclose(corr(xy2.covs), corr(b.covs), rtol=1e-12)
        for c in spec.covs:
            # y and y' are conditionally independent given x in every component
            cond = c[1:, 1:] - np.outer(c[1:, 0], c[0, 1:]) / c[0, 0]
            assert abs(cond[0, 1]) <= 1e-9 * np.sqrt(cond[0, 0] * cond[1, 1])

    def test_ambiguous_triplet_rejected(self):
        x = np.zeros(3)
        with pytest.raises(ValueError):
            eb.Triplet(x, x, x, 0.5, 0.51, 0.01, 0.01, 1, 0)

    def test_deterministic(self):
        a = eb.gen_triplets(2, 2, 30, seed=5, n_mci=5000)
        b = eb.gen_triplets(2, 2, 30, seed=5, n_mci=5000)
        assert [t.seed for t in a] == [t.seed for t in b]
        np.testing.assert_array_equal(a[1].ys2, b[1].ys2)


class TestIndependence:
    def test_oracle_auc_one(self):
        rep = eb.independence_auc_suite("one_feature", [4], [64], eb.OracleSlicedMI("one_feature", m=50),
                                        trials=2, pairs_per_trial=20)
        assert rep.summary["curves"][0]["mean_auc"] == 1.0

    def test_oracle_matches_gaussian_formula(self):
        # indep_coords, d = 1: Y = (X + Z)/sqrt2 has correlation 1/sqrt2
        o = eb.OracleSlicedMI("indep_coords", m=4)
        v = o(np.zeros((3, 1)), np.zeros((3, 1)), 0, True)
        assert v == pytest.approx(gaussian_mi_analytic(1 / math.sqrt(2)).mi_nats, abs=1e-12)
        assert o(np.zeros((3, 1)), np.zeros((3, 1)), 0, False) == 0.0

    def test_noise_scorer_near_half(self):
        noise = lambda X, Y, seed: float(np.random.default_rng(seed + 17).random())
        rep = eb.independence_auc_suite("indep_coords", [2], [16], noise, trials=10, pairs_per_trial=100)
        assert abs(rep.summary["curves"][0]["mean_auc"] - 0.5) <= 0.1

    def test_sliced_ksg_separates_strong_dependence(self):
        scorer = eb.SlicedScorer(eb.make_estimator("ksg", k=3), m=10)
        rep = eb.independence_auc_suite("indep_coords", [2], [200], scorer, trials=1, pairs_per_trial=10)
        assert rep.summary["curves"][0]["mean_auc"] >= 0.8

    def test_odd_pairs(self):
        with pytest.raises(ValueError):
            eb.independence_auc_suite("indep_coords", [2], [10], lambda X, Y, s: 0.0, pairs_per_trial=5)


class TestTiming:
    def test_rows_and_batch_mode(self):
        calls = []
        est = eb.NamedEstimator("fake", lambda s, seed: 0.0,
                                lambda ss, seeds: calls.append(len(ss)) or np.zeros(len(ss)))
        rep = eb.timing_suite([est, eb.make_estimator("ksg")], lengths=[200, 1000], repeats=8, batch_size=4)
        names = [(r["estimator"], r["T"]) for r in rep.summary["rows"]]
        assert ("fake-4", 200) in names and ("ksg", 1000) in names and ("ksg-4", 200) not in names
        assert calls == [4, 4, 4, 4]
        assert all(r["mean_seconds"] >= 0 for r in rep.summary["rows"])

    def test_ksg_time_grows(self):
        rep = eb.timing_suite([eb.make_estimator("ksg")], lengths=[200, 5000], repeats=5)
        t = {r["T"]: r["mean_seconds"] for r in rep.summary["rows"]}
        assert t[5000] >= t[200]


class TestReports:
    def test_round_trip(self, tmp_path):
        rep = eb.sanity_gaussian_suite([eb.make_estimator("ksg"), eb.make_estimator("kde")], [0.2, -0.4], 100, [3, 4])
        csv_path, json_path = eb.write_report(rep, tmp_path)
        assert csv_path.name == "sanity_ksg+kde_seed3.csv"
        assert eb.read_records_csv(csv_path) == rep.records
        doc = eb.read_summary_json(json_path)
        assert doc["schema_version"] == 1 and doc["summary"] == json.loads(json.dumps(rep.summary))

    def test_unknown_schema(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text(json.dumps({"schema_version": 99}))
        with pytest.raises(ValueError):
            eb.read_summary_json(p)


class TestEstimators:
    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown estimator"):
            eb.make_estimator("nope")

    def test_infonet_needs_model(self):
        with pytest.raises(ValueError):
            eb.make_estimator("infonet")

    def test_many_without_batch(self):
        est = eb.make_estimator("ksg")
        seqs = [JointSequence(np.arange(20.0), np.arange(20.0) ** 2)] * 2
        np.testing.assert_array_equal(est.many(seqs, [0, 1]), [est(seqs[0], 0)] * 2)
