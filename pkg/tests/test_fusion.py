from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_timeline, timelines
from diarfuse.fusion import (
    HypothesisSet,
    align_labels,
    dover_lap_vote,
    fuse,
    hungarian,
    pairwise_overlap_cost,
    rank_weights,
    round_half_even,
)
from diarfuse.scoring import ScoringOptions, score
from diarfuse.simulate import SimConfig, generate_ground_truth
from diarfuse.timeline import SpeakerTurn, Timeline, normalize, timeline_from_tuples
from oracles import assignment_lex_smallest, assignment_optimum, joint_alignment


def tl(*turns, sid="s"):
    return timeline_from_tuples(sid, turns)


def relabel_jitter(t: Timeline, rng, names, jitter=0.05) -> Timeline:
    """Same speech with new label names and slightly moved boundaries."""
    mapping = dict(zip(t.speakers(), names))
    turns = []
    for x in t.turns:
        s = max(0.0, x.start + rng.uniform(-jitter, jitter))
        e = x.end + rng.uniform(-jitter, jitter)
        if e - s > 0.05:
            turns.append(SpeakerTurn(mapping[x.speaker], s, e))
    return normalize(Timeline(t.session_id, tuple(turns)))


class TestHungarian:
    def test_examples(self):
        assert hungarian([[0, 9], [9, 0]]).as_dict() == {0: 0, 1: 1}
        sol = hungarian([[4, 1], [1, 4]])
        assert sol.as_dict() == {0: 1, 1: 0} and sol.cost == 2

    @pytest.mark.parametrize("seed", range(30))
    def test_integer_5x5_matches_brute_force(self, seed):
        C = np.random.default_rng(seed).integers(0, 5, (5, 5)).astype(float)
        sol = hungarian(C)
        assert sol.cost == assignment_optimum(C)
        assert sol.pairs == assignment_lex_smallest(C)

    @pytest.mark.parametrize("shape", [(2, 5), (5, 2), (1, 4), (3, 3), (6, 4)])
    def test_rectangular(self, shape):
        rng = np.random.default_rng(sum(shape))
        C = rng.integers(-3, 3, shape).astype(float)
        sol = hungarian(C)
        assert len(sol.pairs) == min(shape)
        assert sol.cost == pytest.approx(assignment_optimum(C))
        assert sol.pairs == assignment_lex_smallest(C)

    def test_empty(self):
        assert hungarian(np.zeros((0, 3))).pairs == ()

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            hungarian([[np.inf]])


class TestOverlapCost:
    def test_identical_gives_identity(self):
        t = tl(("A", 0, 5), ("B", 5, 9), ("C", 2, 3))
        C = pairwise_overlap_cost(t, t)
        assert np.all(np.diag(C) <= C.min(axis=1))
        assert hungarian(C).as_dict() == {0: 0, 1: 1, 2: 2}

    def test_disjoint_is_zero(self):
        assert not pairwise_overlap_cost(tl(("A", 0, 1)), tl(("X", 2, 3))).any()

    def test_interval_intersection(self):
        assert pairwise_overlap_cost(tl(("A", 0, 10)), tl(("X", 0, 4)))[0, 0] == -4.0


class TestAlign:
    def test_label_strings_unified(self):
        a = tl(("A", 0, 5), ("B", 5, 9))
        b = tl(("x", 0, 5), ("y", 5, 9))
        m = align_labels(HypothesisSet("s", (a, b)))
        assert m.maps[1] == {"x": "A", "y": "B"}

    def test_extra_speaker_gets_fresh_label(self):
        a = tl(("A", 0, 5), ("B", 5, 9))
        b = tl(("A", 0, 5), ("B", 5, 8), ("C", 20, 21))
        m = align_labels(HypothesisSet("s", (a, b)))
        assert m.maps[1]["C"] not in m.maps[0].values()
        assert len(m.global_labels) == 3

    def test_fresh_label_never_collides(self):
        a = tl(("A", 0, 5), ("B", 5, 9), ("B@1", 30, 31))
        b = tl(("A", 0, 5), ("B", 40, 41))
        m = align_labels(HypothesisSet("s", (a, b)))
        assert len(set(m.maps[1].values())) == 2
        assert m.maps[1]["B"] not in {"A", "B", "B@1"}

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_joint_permutation_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n_spk = int(rng.integers(2, 4))
        K = int(rng.integers(2, 4))
        base = random_timeline(rng, n_speakers=n_spk, n_turns=12, length=60, labels="ABC")
        base = normalize(base)
        while len(base.speakers()) < n_spk:
            base = normalize(random_timeline(rng, n_speakers=n_spk, n_turns=12, length=60, labels="ABC"))
        hyps = [base]
        for h in range(1, K):
            names = [f"h{h}_{c}" for c in rng.permutation(n_spk)]
            hyps.append(relabel_jitter(base, rng, names, jitter=0.02))
        mapping = align_labels(HypothesisSet("s", tuple(hyps)))
        oracle = joint_alignment([h.by_speaker() for h in hyps])
        anchor_names = {g: g for g in hyps[0].speakers()}
        for h in range(K):
            ours = {loc: mapping.maps[h][loc] for loc in hyps[h].speakers()}
            # compare partitions of (hypothesis, label) pairs into global speakers
            ours_in_anchor = {loc: _to_anchor(mapping, g) for loc, g in ours.items()}
            assert ours_in_anchor == {loc: anchor_names[v] for loc, v in oracle[h].items()}


def _to_anchor(mapping, g):
    """Name of the first-hypothesis label mapped to global label ``g``."""
    for loc, glob in mapping.maps[0].items():
        if glob == g:
            return loc
    return g


class TestVoting:
    def test_majority_keeps_speaker(self):
        hs = HypothesisSet("s", (tl(("g1", 0, 1)), tl(("g1", 0, 1)), Timeline("s", ())))
        for scheme in ("uniform", "linear"):
            out = dover_lap_vote(hs, align_labels(hs), scheme)
            assert out.turns == (SpeakerTurn("g1", 0.0, 1.0),)

    def test_overlap_emitted(self):
        t = tl(("g1", 0, 1), ("g2", 0, 1))
        assert fuse([t, t]).turns == t.turns

    def test_single_hypothesis_is_identity(self):
        t = tl(("B", 0, 2), ("A", 1, 3))
        assert fuse([t]) == normalize(t)

    def test_user_weights_break_a_two_way_split(self):
        a, b = tl(("A", 0, 4)), tl(("A", 0, 2))
        assert fuse([a, b], [1.0, 3.0], "uniform").turns == (SpeakerTurn("A", 0.0, 2.0),)
        assert fuse([a, b], [3.0, 1.0], "uniform").turns == (SpeakerTurn("A", 0.0, 4.0),)

    def test_rank_weights(self):
        assert rank_weights([5.0, 9.0, 1.0]).tolist() == pytest.approx([2 / 6, 3 / 6, 1 / 6])
        assert rank_weights([1, 2], "uniform").tolist() == [0.5, 0.5]
        with pytest.raises(ValueError):
            rank_weights([1.0], "cubic")

    @pytest.mark.parametrize("x,expected", [(0.5, 0), (1.5, 2), (2.5, 2), (2.5 + 5e-10, 2), (1.4, 1), (1.6, 2)])
    def test_round_half_even(self, x, expected):
        assert round_half_even(x) == expected

    @given(timelines(max_turns=10), st.sampled_from([1, 2, 3, 6]), st.sampled_from(["uniform", "linear"]))
    @settings(max_examples=60)
    def test_idempotent(self, t, K, scheme):
        assert fuse([t] * K, rank_weighting=scheme) == normalize(t)

    @pytest.mark.parametrize("seed", range(10))
    def test_hypothesis_order_does_not_matter(self, seed):
        rng = np.random.default_rng(seed)
        base = normalize(random_timeline(rng, n_speakers=3, n_turns=15, length=60))
        hyps = [relabel_jitter(base, rng, [f"c{k}_{i}" for i in range(3)], 0.3) for k in range(4)]
        weights = rng.uniform(0.5, 1.5, 4)
        perm = rng.permutation(4)
        a = fuse(hyps, weights)
        b = fuse([hyps[i] for i in perm], weights[perm])
        opts = ScoringOptions(collar=0.0)
        if a.turns:
            assert score(a, b, opts).der == pytest.approx(0.0, abs=1e-9)
            assert len(a) == len(b)

    @pytest.mark.parametrize("seed", range(10))
    def test_output_labels_and_counts_are_bounded(self, seed):
        rng = np.random.default_rng(seed)
        hyps = [normalize(random_timeline(rng, n_speakers=3, n_turns=12, length=40)) for _ in range(3)]
        hs = HypothesisSet("s", tuple(hyps))
        m = align_labels(hs)
        out = dover_lap_vote(hs, m)
        assert set(out.speakers()) <= set(m.global_labels)
        cuts = sorted({x for t in hyps + [out] for turn in t for x in (turn.start, turn.end)})
        for a, b in zip(cuts, cuts[1:]):
            mid = (a + b) / 2
            n_out = sum(1 for turn in out if turn.start <= mid < turn.end)
            n_max = max(sum(1 for turn in h if turn.start <= mid < turn.end) for h in hyps)
            assert n_out <= n_max


@pytest.mark.parametrize("seed", range(1, 11))
def test_faithful_majority_outvotes_a_scrambled_channel(seed):
    truth = generate_ground_truth(SimConfig(seed=seed, session_length=300)).timeline
    rng = np.random.default_rng(seed)
    faithful = [relabel_jitter(truth, rng, [f"c{k}s{i}" for i in range(4)], 0.1) for k in range(5)]
    # outlier: speaker identities shuffled independently in every 5 s chunk
    chunks = []
    for c0 in np.arange(0, 300, 5.0):
        perm = dict(zip(truth.speakers(), rng.permutation(truth.speakers())))
        for t in truth.restrict(c0, c0 + 5).turns:
            chunks.append(SpeakerTurn(perm[t.speaker], t.start, t.end))
    outlier = normalize(Timeline(truth.session_id, tuple(chunks)))
    fused = fuse(faithful + [outlier])
    assert score(truth, fused).der < score(truth, outlier).der
