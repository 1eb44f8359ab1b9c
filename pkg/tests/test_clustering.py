from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diarfuse.clustering import (
    ClusteringParams,
    ConstraintSet,
    canonical_labels,
    cluster_session,
    constrained_ahc,
    cop_kmeans,
    cosine_distance_matrix,
    count_violations,
    estimate_num_speakers,
    kmeans_objective,
    plain_ahc,
    plain_kmeans,
    project_labels,
)
from diarfuse.errors import Infeasible
from diarfuse.local_io import LocalStream
from oracles import constrained_optimum, same_partition, spherical_objective


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def blobs(rng, k, per, dim=6, spread=0.05):
    centres = unit(rng.standard_normal((k, dim)))
    X = np.concatenate([centres[c] + spread * rng.standard_normal((per, dim)) for c in range(k)])
    truth = np.repeat(np.arange(k), per)
    return unit(X), truth


def stream(idx, emb, j=0):
    return LocalStream(idx, j, np.ones(10, dtype=bool), unit(emb))


def all_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in all_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


class TestDistance:
    def test_examples(self):
        X = unit([[1, 0], [1, 0], [0, 1], [-1, 0]])
        d = cosine_distance_matrix(X)
        assert d[0, 1] == 0.0 and d[0, 2] == pytest.approx(1.0) and d[0, 3] == pytest.approx(2.0)
        assert np.all(np.diag(d) == 0.0)
        assert np.allclose(d, d.T, atol=1e-12)


class TestConstraintSet:
    def test_from_groups(self):
        cs = ConstraintSet.from_groups([0, 0, 1, 1, 1])
        assert cs.cannot_link == {(0, 1), (2, 3), (2, 4), (3, 4)}

    @pytest.mark.parametrize("pair", [(0, 0), (0, 5)])
    def test_invalid_pairs(self, pair):
        with pytest.raises(ValueError):
            ConstraintSet(3, frozenset({pair}))

    def test_violation_counts(self):
        cs = ConstraintSet.from_groups([0, 0, 1, 1, 2])
        assert count_violations([0, 0, 1, 1, 0], cs) == (2, 2)
        assert count_violations([0, 1, 0, 1, 0], cs) == (0, 0)


class TestConstrainedAhc:
    def test_identical_pair_merges(self):
        d = np.zeros((2, 2))
        assert constrained_ahc(d, ConstraintSet.empty(2), 0.5, 2.0).k == 1

    def test_penalty_blocks_merge(self):
        d = np.zeros((2, 2))
        cs = ConstraintSet(2, frozenset({(0, 1)}))
        res = constrained_ahc(d, cs, 0.5, 10.0)
        assert res.k == 2 and res.violations == 0

    def test_three_groups_match_exhaustive_partition(self):
        rng = np.random.default_rng(3)
        X, _ = blobs(rng, 3, 2, spread=0.01)
        d = cosine_distance_matrix(X)
        thresh = 0.5
        valid = []
        for part in all_partitions(list(range(6))):
            intra = all(d[a, b] < thresh for g in part for a, b in itertools.combinations(g, 2))
            inter = all(d[a, b] > thresh for g, h in itertools.combinations(part, 2) for a in g for b in h)
            if intra and inter:
                valid.append(part)
        assert len(valid) == 1
        labels = np.empty(6, dtype=int)
        for c, g in enumerate(valid[0]):
            labels[g] = c
        res = constrained_ahc(d, ConstraintSet.empty(6), thresh, 2.0)
        assert res.k == 3 and same_partition(res.labels, labels)

    def test_tie_goes_to_lowest_pair(self):
        # all three pairs equally close: (0, 1) merges first
        d = np.array([[0, 0.1, 0.1], [0.1, 0, 0.1], [0.1, 0.1, 0]])
        res = constrained_ahc(d, None, 0.15, 0.0)
        assert res.diagnostics["merges"][0][:2] == (0, 1)

    @given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    @settings(max_examples=60)
    def test_k_monotone_in_threshold(self, seed, t1, t2):
        rng = np.random.default_rng(seed)
        X = unit(rng.standard_normal((10, 4)))
        cs = ConstraintSet.from_groups(rng.integers(0, 4, 10))
        d = cosine_distance_matrix(X)
        lo, hi = sorted((t1, t2))
        assert constrained_ahc(d, cs, hi, 2.0).k <= constrained_ahc(d, cs, lo, 2.0).k

    @given(st.integers(0, 10_000))
    @settings(max_examples=40)
    def test_zero_penalty_equals_plain(self, seed):
        rng = np.random.default_rng(seed)
        d = cosine_distance_matrix(unit(rng.standard_normal((9, 5))))
        a = constrained_ahc(d, ConstraintSet.empty(9), 0.8, 0.0)
        b = plain_ahc(d, ConstraintSet.empty(9), 0.8)
        assert a.labels == b.labels


class TestEstimate:
    @pytest.mark.parametrize("ahc_k,cap,expected", [(6, 4, 4), (2, 4, 2), (1, 1, 1)])
    def test_min_rule(self, ahc_k, cap, expected):
        assert estimate_num_speakers(ahc_k, cap) == expected


class TestCopKmeans:
    def pairs(self):
        return unit([[1, 0.01], [1, -0.01], [-1, 0.01], [-1, -0.01]])

    def test_natural_clusters(self):
        res = cop_kmeans(self.pairs(), ConstraintSet.empty(4), 2)
        assert same_partition(res.labels, [0, 0, 1, 1])

    def test_constrained_pair_split_matches_enumeration(self):
        X = self.pairs()
        cs = ConstraintSet(4, frozenset({(0, 1)}))
        res = cop_kmeans(X, cs, 2)
        assert res.violations == 0 and res.labels[0] != res.labels[1]
        _, best = constrained_optimum(X, cs.cannot_link, 2)
        assert spherical_objective(X, res.labels) == pytest.approx(spherical_objective(X, best), abs=1e-12)

    def test_k1_with_pair_is_infeasible(self):
        with pytest.raises(Infeasible):
            cop_kmeans(self.pairs(), ConstraintSet(4, frozenset({(0, 1)})), 1)

    def test_plain_kmeans_counts_the_violation(self):
        res = plain_kmeans(self.pairs(), ConstraintSet(4, frozenset({(0, 1)})), 1)
        assert res.k == 1 and res.violations == 1

    def test_max_iter_is_not_an_error(self):
        rng = np.random.default_rng(0)
        X = unit(rng.standard_normal((30, 4)))
        res = cop_kmeans(X, ConstraintSet.from_groups(np.arange(30) // 3), 3, max_iter=1)
        assert res.violations == 0

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        X = unit(rng.standard_normal((40, 8)))
        cs = ConstraintSet.from_groups(np.arange(40) // 4)
        a = cop_kmeans(X, cs, 4, seed=7)
        b = cop_kmeans(X, cs, 4, seed=7)
        assert a == b

    @given(st.integers(0, 10_000))
    @settings(max_examples=40)
    def test_empty_constraints_equal_plain(self, seed):
        rng = np.random.default_rng(seed)
        X = unit(rng.standard_normal((12, 5)))
        k = int(rng.integers(1, 5))
        a = cop_kmeans(X, ConstraintSet.empty(12), k, seed=seed)
        b = plain_kmeans(X, ConstraintSet.empty(12), k, seed=seed)
        assert a.labels == b.labels

    @given(st.integers(0, 10_000))
    @settings(max_examples=40)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        X = unit(rng.standard_normal((12, 5)))
        groups = rng.integers(0, 5, 12)
        perm = rng.permutation(12)
        cs = ConstraintSet.from_groups(groups)
        cs_p = ConstraintSet.from_groups(groups[perm])
        d = cosine_distance_matrix(X)
        ahc = constrained_ahc(d, cs, 0.9, 2.0)
        ahc_p = constrained_ahc(d[np.ix_(perm, perm)], cs_p, 0.9, 2.0)
        assert same_partition(np.asarray(ahc.labels)[perm], ahc_p.labels)
        k = ahc.k
        if k < max(np.bincount(groups)):
            return  # infeasible for this k
        a = cop_kmeans(X, cs, k, ahc)
        b = cop_kmeans(X[perm], cs_p, k, ahc_p)
        assert same_partition(np.asarray(a.labels)[perm], b.labels)

    @pytest.mark.parametrize("seed", range(25))
    def test_objective_not_below_constrained_optimum(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        k = int(rng.integers(2, 4))
        X = unit(rng.standard_normal((n, 4)))
        groups = rng.permutation(np.arange(n) // k)  # at most k items per group
        cs = ConstraintSet.from_groups(groups)
        best, _ = constrained_optimum(X, cs.cannot_link, k)
        try:
            res = cop_kmeans(X, cs, k)
        except Infeasible:
            return
        assert kmeans_objective(X, res.labels) >= best - 1e-9

    @pytest.mark.parametrize("seed", range(25))
    def test_well_separated_reaches_optimum(self, seed):
        rng = np.random.default_rng(100 + seed)
        k = int(rng.integers(2, 4))
        per = 8 // k
        X, truth = blobs(rng, k, per, dim=8, spread=0.02)
        d = cosine_distance_matrix(X)
        intra = max(d[a, b] for a in range(len(X)) for b in range(len(X)) if truth[a] == truth[b])
        inter = min(d[a, b] for a in range(len(X)) for b in range(len(X)) if truth[a] != truth[b])
        assert inter >= 4 * intra
        # cannot-links only between items of different true clusters
        cand = [(a, b) for a in range(len(X)) for b in range(a + 1, len(X)) if truth[a] != truth[b]]
        pairs = frozenset(cand[i] for i in rng.choice(len(cand), size=min(3, len(cand)), replace=False))
        cs = ConstraintSet(len(X), pairs)
        best, best_labels = constrained_optimum(X, pairs, k)
        res = cop_kmeans(X, cs, k)
        assert kmeans_objective(X, res.labels) == pytest.approx(best, abs=1e-9)
        assert same_partition(res.labels, best_labels)


class TestProjection:
    def test_smallest_folds_into_nearest(self):
        X = unit([[1, 0], [1, 0.1], [0, 1], [0.1, 1], [1, 0.05]])
        lab = project_labels(X, [0, 0, 1, 1, 2], 2)
        assert same_partition(lab, [0, 0, 1, 1, 0])

    def test_canonical_labels(self):
        assert canonical_labels([5, 5, 2, 7, 2]).tolist() == [0, 0, 1, 2, 1]


class TestClusterSession:
    def test_single_segment_forces_distinct(self):
        rng = np.random.default_rng(0)
        E = unit(rng.standard_normal((4, 16)))
        res = cluster_session([stream(0, e, j) for j, e in enumerate(E)], 4)
        assert res.k == 4 and len(set(res.labels)) == 4

    def test_two_segments_two_speakers_match_enumeration(self):
        a, b = unit([1, 0, 0.05]), unit([0, 1, 0.05])
        noise = np.array([0.02, -0.01, 0.0])
        ss = [stream(0, a, 0), stream(0, b, 1), stream(1, b + noise, 0), stream(1, a - noise, 1)]
        res = cluster_session(ss, 4)
        X = unit(np.stack([s.embedding for s in ss]))
        _, best = constrained_optimum(X, ConstraintSet.from_groups([0, 0, 1, 1]).cannot_link, 2)
        assert res.k == 2 and same_partition(res.labels, best)
        assert res.labels[0] == res.labels[3] and res.labels[1] == res.labels[2]

    def test_identical_embeddings_one_per_segment(self):
        ss = [stream(i, [1.0, 0.0, 0.0]) for i in range(5)]
        assert cluster_session(ss, 4).k == 1

    def test_cap_applies(self):
        rng = np.random.default_rng(1)
        E = unit(rng.standard_normal((6, 32)))
        ss = [stream(i, e) for i, e in enumerate(E)]
        res = cluster_session(ss, 4)
        assert res.diagnostics["ahc_k"] == 6 and res.k == 4

    def test_infeasible_propagates(self):
        rng = np.random.default_rng(2)
        E = unit(rng.standard_normal((3, 8)))
        with pytest.raises(Infeasible):
            cluster_session([stream(0, e, j) for j, e in enumerate(E)], 2)

    @pytest.mark.parametrize("algorithm", ["cop_kmeans", "kmeans", "cahc", "ahc"])
    def test_algorithms_report_diagnostics(self, algorithm):
        rng = np.random.default_rng(3)
        X, _ = blobs(rng, 3, 4, dim=8)
        ss = [stream(i // 3, x, i % 3) for i, x in enumerate(X)]
        res = cluster_session(ss, 4, ClusteringParams(algorithm=algorithm))
        for key in ("ahc_k", "k", "violations", "violating_segments", "ahc_violations"):
            assert key in res.diagnostics

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            ClusteringParams(algorithm="spectral")
