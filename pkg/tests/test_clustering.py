import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import exhaustive_two_means, naive_silhouette

from flexgrid.clustering import (
    CLUSTER_SCHEMA,
    ClusteringError,
    ClusterModel,
    FeatureVector,
    cluster_aggregates,
    feature_standard,
    kmeans,
    kmeans_best,
    load_cluster_model,
    make_features,
    model_inertia,
    polar_coordinates,
    save_cluster_model,
    select_k,
    silhouette,
    write_diagnostics,
)
from flexgrid.ev_data import EvProfile, SynthSpec, build_profiles, synth_sessions


def profile(uid, avg, p_max=7.0):
    avg = np.asarray(avg, dtype=float)
    return EvProfile(uid, avg, (avg > 0).astype(float), p_max, 1)


def points(X, mode="polar"):
    return [FeatureVector(f"p{i:03d}", x, mode) for i, x in enumerate(np.asarray(X, dtype=float))]


def impulse(minute, kw):
    p = np.zeros(1440)
    p[minute] = kw
    return p


class TestFeatures:
    def test_standard_is_identity(self):
        avg = np.zeros(1440)
        avg[:60] = 7.0
        f = feature_standard(profile("a", avg))
        assert f.mode == "standard" and np.array_equal(f.values, avg)
        assert not feature_standard(profile("z", np.zeros(1440))).values.any()

    def test_impulses(self):
        np.testing.assert_allclose(polar_coordinates(impulse(360, 1.0)), [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(polar_coordinates(impulse(1080, 7.0)), [-7.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(polar_coordinates(impulse(0, 2.0)), [0.0, 2.0], atol=1e-12)

    def test_constant_vanishes(self):
        c = 3.3
        assert np.all(np.abs(polar_coordinates(np.full(1440, c))) <= 1e-9 * c * 1440)

    def test_rotation(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = rng.random(1440)
            shift = int(rng.integers(1440))
            x1, x2 = polar_coordinates(p)
            a = 2 * np.pi * shift / 1440
            # shifting later in the day rotates (sin-sum, cos-sum) by +a
            expected = [x1 * np.cos(a) + x2 * np.sin(a), x2 * np.cos(a) - x1 * np.sin(a)]
            np.testing.assert_allclose(polar_coordinates(np.roll(p, shift)), expected, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
    def test_linear(self, a, b, seed):
        rng = np.random.default_rng(seed)
        P, Q = rng.random(1440), rng.random(1440)
        lhs = polar_coordinates(a * P + b * Q)
        rhs = a * polar_coordinates(P) + b * polar_coordinates(Q)
        scale = abs(a) * np.abs(polar_coordinates(P)).max() + abs(b) * np.abs(polar_coordinates(Q)).max() + 1.0
        assert np.abs(lhs - rhs).max() <= 1e-12 * scale * 100

    def test_make_features_sorted(self):
        ps = {u: profile(u, impulse(i * 100, 1.0)) for i, u in enumerate(["c", "a", "b"])}
        fs = make_features(ps, "polar")
        assert [f.user_id for f in fs] == ["a", "b", "c"]
        with pytest.raises(ClusteringError):
            make_features(ps, "spiral")

    def test_feature_validation(self):
        with pytest.raises(ClusteringError):
            FeatureVector("a", [1.0, 2.0, 3.0], "polar")
        with pytest.raises(ClusteringError):
            FeatureVector("a", [1.0, np.nan], "polar")


class TestKmeans:
    def test_k1_is_mean(self):
        X = np.random.default_rng(1).normal(size=(30, 2))
        m = kmeans(points(X), 1)
        np.testing.assert_allclose(m.centroids[0], X.mean(0), atol=1e-12)
        assert m.inertia_j_kw2 == pytest.approx(((X - X.mean(0)) ** 2).sum(), rel=1e-12)

    def test_separated_groups(self):
        rng = np.random.default_rng(2)
        X = np.vstack([rng.normal(0, 1, (5, 2)), rng.normal(100, 1, (5, 2))])
        m = kmeans(points(X), 2, seed=3)
        labels = [m.assignments[f"p{i:03d}"] for i in range(10)]
        assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1 and labels[0] != labels[5]
        within = sum(((g - g.mean(0)) ** 2).sum() for g in (X[:5], X[5:]))
        assert m.inertia_j_kw2 == pytest.approx(within, rel=1e-12)

    def test_matches_exhaustive(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            X = rng.normal(size=(int(rng.integers(3, 9)), 2))
            best = kmeans_best(points(X), 2, range(50))
            assert best.inertia_j_kw2 == pytest.approx(exhaustive_two_means(X), rel=1e-12)

    def test_objective_non_increasing_and_consistent(self):
        X = np.random.default_rng(4).normal(size=(200, 2)) * [3, 1]
        for seed in range(10):
            m = kmeans(points(X), 4, seed=seed)
            assert all(b <= a + 1e-9 * abs(a) for a, b in zip(m.objective_trace, m.objective_trace[1:]))
            assert model_inertia(m, points(X)) == pytest.approx(m.inertia_j_kw2, rel=1e-9)
            assert sorted(set(m.assignments.values())) == list(range(4))

    def test_deterministic_and_order_free(self):
        X = np.random.default_rng(5).normal(size=(60, 2))
        fs = points(X)
        a = kmeans(fs, 3, seed=7)
        b = kmeans(list(reversed(fs)), 3, seed=7)
        assert a.assignments == b.assignments and a.inertia_j_kw2 == b.inertia_j_kw2

    def test_no_empty_clusters_with_duplicates(self):
        X = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]])
        m = kmeans(points(X), 3, seed=0)
        assert sorted(set(m.assignments.values())) == [0, 1, 2]

    def test_errors(self):
        fs = points(np.zeros((3, 2)))
        with pytest.raises(ClusteringError, match="k=4"):
            kmeans(fs, 4)
        with pytest.raises(ClusteringError, match="duplicate"):
            kmeans(fs + fs[:1], 2)
        with pytest.raises(ClusteringError, match="mixed"):
            kmeans(fs + [FeatureVector("s", np.zeros(1440), "standard")], 2)


class TestSilhouette:
    def test_tight_clusters(self):
        X = np.vstack([np.zeros((5, 2)), np.full((5, 2), 50.0)]) + np.random.default_rng(0).normal(0, 0.1, (10, 2))
        fs = points(X)
        labels = {f.user_id: int(i >= 5) for i, f in enumerate(fs)}
        assert silhouette(fs, labels) > 0.9

    def test_identical_points(self):
        fs = points(np.ones((6, 2)))
        assert silhouette(fs, {f.user_id: i % 2 for i, f in enumerate(fs)}) == 0.0

    def test_matches_naive(self):
        rng = np.random.default_rng(9)
        X = rng.random((50, 2))
        fs = points(X)
        m = kmeans(fs, 2, seed=0)
        labels = [m.assignments[f.user_id] for f in fs]
        s = silhouette(fs, m.assignments)
        assert s == pytest.approx(naive_silhouette(X, labels), abs=1e-12)
        assert -0.2 <= s <= 0.5

    def test_singleton_scores_zero(self):
        X = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0]])
        fs = points(X)
        labels = {"p000": 0, "p001": 0, "p002": 1}
        assert silhouette(fs, labels) == pytest.approx(naive_silhouette(X, [0, 0, 1]), abs=1e-12)

    def test_needs_two_clusters(self):
        fs = points(np.zeros((3, 2)))
        with pytest.raises(ClusteringError):
            silhouette(fs, {f.user_id: 0 for f in fs})


class TestSelectK:
    def blobs(self, centres, n=10, seed=0):
        rng = np.random.default_rng(seed)
        return np.vstack([rng.normal(c, 0.5, (n, 2)) for c in centres])

    def test_planted_three(self):
        X = self.blobs([(0, 0), (30, 0), (0, 30)])
        k, rows, models = select_k(points(X), (2, 6), seeds_per_k=5)
        assert k == 3 and [r.k for r in rows] == [2, 3, 4, 5, 6]
        assert set(models) == {2, 3, 4, 5, 6}

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            X = rng.random((40, 2))
            _, rows, _ = select_k(points(X), (2, 8), seeds_per_k=3)
            inertia = [r.inertia_j_kw2 for r in rows]
            assert all(b <= a for a, b in zip(inertia, inertia[1:])), inertia

    def test_single_candidate(self):
        k, rows, _ = select_k(points(np.random.default_rng(2).random((10, 2))), (2, 2))
        assert k == 2 and len(rows) == 1

    def test_range_errors(self):
        fs = points(np.random.default_rng(3).random((5, 2)))
        with pytest.raises(ClusteringError):
            select_k(fs, (3, 2))
        with pytest.raises(ClusteringError):
            select_k(fs, (2, 5))

    def test_diagnostics_csv(self, tmp_path):
        _, rows, _ = select_k(points(self.blobs([(0, 0), (9, 9)])), (2, 3), seeds_per_k=2)
        write_diagnostics(rows, tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "k,inertia_j_kw2,silhouette" and len(lines) == 3


@pytest.fixture(scope="module")
def synth():
    return build_profiles(synth_sessions(SynthSpec(30, 21, {"night": 0.5, "day": 0.5}, seed=4)), "weekdays")


class TestAggregates:
    def test_standard_centroids_match(self, synth):
        m = kmeans(make_features(synth, "standard"), 2, seed=0)
        agg = cluster_aggregates(m, synth)
        np.testing.assert_allclose(agg.centroid_profile_kw, m.centroids, atol=1e-9)
        assert agg.member_count.sum() == len(synth)
        assert np.all(agg.frac_charging >= 0) and np.all(agg.frac_charging <= 1)
        assert np.all(agg.centroid_profile_kw >= 0) and np.all(agg.p_max_kw > 0)

    def test_means(self):
        ps = {"a": profile("a", impulse(10, 6.0), 6.0), "b": profile("b", impulse(11, 8.0), 8.0)}
        m = ClusterModel("standard", 1, np.zeros((1, 1440)), {"a": 0, "b": 0}, 0.0, 0, 1)
        agg = cluster_aggregates(m, ps)
        assert agg.p_max_kw[0] == 7.0 and agg.centroid_profile_kw[0, 10] == 3.0
        single = cluster_aggregates(ClusterModel("standard", 1, np.zeros((1, 1440)), {"a": 0}, 0.0, 0, 1), ps)
        np.testing.assert_array_equal(single.centroid_profile_kw[0], ps["a"].avg_profile_kw)

    def test_missing_profile(self):
        m = ClusterModel("polar", 1, np.zeros((1, 2)), {"ghost": 0}, 0.0, 0, 1)
        with pytest.raises(ClusteringError, match="ghost"):
            cluster_aggregates(m, {})

    def test_round_trip(self, synth, tmp_path):
        m = kmeans(make_features(synth, "polar"), 3, seed=1)
        agg = cluster_aggregates(m, synth)
        save_cluster_model(tmp_path / "m.json", m, agg, {"note": "x"})
        m2, agg2 = load_cluster_model(tmp_path / "m.json")
        assert m2.assignments == m.assignments and m2.inertia_j_kw2 == m.inertia_j_kw2
        np.testing.assert_array_equal(agg2.frac_charging, agg.frac_charging)
        save_cluster_model(tmp_path / "m2.json", m2, agg2, {"note": "x"})
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_schema_checked(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"schema": "other"}))
        with pytest.raises(ClusteringError, match=CLUSTER_SCHEMA):
            load_cluster_model(p)
