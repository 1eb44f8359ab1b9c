from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_timeline, timelines, turn_tuples
from diarfuse.errors import EmptyReference
from diarfuse.scoring import (
    DerReport,
    ScoringOptions,
    macro_der,
    optimal_mapping,
    pooled,
    read_scenario_map,
    score,
    score_sessions,
    scored_regions,
)
from diarfuse.timeline import Timeline, Uem, normalize, read_rttm, read_uem, timeline_from_tuples
from oracles import der_bruteforce


def tl(*turns, sid="s"):
    return timeline_from_tuples(sid, turns)


NO_COLLAR = ScoringOptions(collar=0.0)


class TestRegions:
    def test_collar_arithmetic(self):
        opts = ScoringOptions(0.25, uem=Uem("s", ((0.0, 30.0),)))
        assert scored_regions(tl(("A", 10, 20)), opts) == [(0, 9.75), (10.25, 19.75), (20.25, 30)]

    def test_zero_collar_is_uem(self):
        opts = ScoringOptions(0.0, uem=Uem("s", ((0.0, 30.0),)))
        assert scored_regions(tl(("A", 10, 20)), opts) == [(0.0, 30.0)]

    def test_overlapping_collars_merge(self):
        opts = ScoringOptions(0.25, uem=Uem("s", ((0.0, 10.0),)))
        regions = scored_regions(tl(("A", 2, 2.3), ("B", 2.4, 6)), opts)
        assert regions == [(0.0, 1.75), (2.65, 5.75), (6.25, 10.0)]

    def test_negative_collar_rejected(self):
        with pytest.raises(ValueError):
            ScoringOptions(collar=-0.1)


class TestScore:
    def test_identical_is_zero(self):
        t = tl(("A", 0, 5), ("B", 3, 9))
        assert score(t, t).der == 0.0

    def test_short_system_misses(self):
        r = score(tl(("A", 0, 10)), tl(("X", 0, 8)), NO_COLLAR)
        assert (r.mi, r.fa, r.cf, r.der) == pytest.approx((20.0, 0.0, 0.0, 20.0))

    def test_unmatched_overlapping_reference(self):
        r = score(tl(("A", 0, 10), ("B", 0, 10)), tl(("X", 0, 10)), NO_COLLAR)
        assert (r.mi, r.cf, r.der) == pytest.approx((50.0, 0.0, 50.0))
        assert r.mapping == {"A": "X"}

    def test_swapped_labels(self):
        ref = tl(("A", 0, 5), ("B", 5, 10))
        sys = tl(("B", 0, 5), ("A", 5, 10))
        r = score(ref, sys)
        assert r.der == 0.0 and r.mapping == {"A": "B", "B": "A"}

    def test_empty_system_is_all_missed(self):
        r = score(tl(("A", 0, 4), ("B", 2, 6)), Timeline("s", ()), ScoringOptions(0.25))
        assert r.mi == pytest.approx(100.0) and r.fa == 0 and r.cf == 0

    def test_empty_reference(self):
        with pytest.raises(EmptyReference):
            score(Timeline("s", ()), tl(("X", 0, 1)))

    def test_overlap_exclusion(self):
        ref = tl(("A", 0, 10), ("B", 5, 10))
        r = score(ref, tl(("X", 0, 10)), ScoringOptions(0.0, score_overlaps=False))
        assert r.der == 0.0 and r.scored_speech_s == 5.0

    @given(timelines(max_turns=8, millisecond=True), timelines(max_turns=8, millisecond=True), st.randoms())
    @settings(max_examples=80)
    def test_invariants(self, ref, sys, rnd):
        if not ref.turns:
            return
        sys = Timeline(ref.session_id, sys.turns)
        try:
            r = score(ref, sys)
        except EmptyReference:
            return  # the collar covered all reference speech
        assert min(r.cf, r.fa, r.mi) >= 0
        assert r.der == pytest.approx(r.cf + r.fa + r.mi, abs=1e-9)
        labels = sys.speakers()
        shuffled = labels[:]
        rnd.shuffle(shuffled)
        renamed = sys.relabel({a: f"z{b}" for a, b in zip(labels, shuffled)})
        assert score(ref, renamed).der == pytest.approx(r.der, abs=1e-9)

    @given(timelines(max_turns=8, millisecond=True), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=60)
    def test_collar_never_adds_speech(self, ref, c1, c2):
        lo, hi = sorted((c1, c2))
        if not ref.turns:
            return
        try:
            small = score(ref, ref, ScoringOptions(lo)).scored_speech_s
        except EmptyReference:
            return
        try:
            big = score(ref, ref, ScoringOptions(hi)).scored_speech_s
        except EmptyReference:
            big = 0.0
        assert big <= small + 1e-9


class TestMapping:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_exhaustive_injective_maps(self, seed):
        rng = np.random.default_rng(seed)
        ref = normalize(random_timeline(rng, 3, 10, 30, labels="ABC"))
        sys = normalize(random_timeline(rng, 3, 10, 30, labels="XYZ"))
        m = optimal_mapping(ref, sys, NO_COLLAR)

        def mapped_overlap(mapping):
            total = 0.0
            rs, ss = ref.by_speaker(), sys.by_speaker()
            for r, s in mapping.items():
                for a0, a1 in rs[r]:
                    for b0, b1 in ss[s]:
                        total += max(0.0, min(a1, b1) - max(a0, b0))
            return total

        best = 0.0
        R, S = ref.speakers(), sys.speakers()
        for k in range(min(len(R), len(S)) + 1):
            for rs in itertools.combinations(R, k):
                for ss in itertools.permutations(S, k):
                    best = max(best, mapped_overlap(dict(zip(rs, ss))))
        assert mapped_overlap(m) == pytest.approx(best, abs=1e-9)
        assert len(set(m.values())) == len(m)


@pytest.mark.parametrize("seed", range(30))
def test_agrees_with_bruteforce_scorer(seed):
    rng = np.random.default_rng(seed)
    ref = random_timeline(rng, int(rng.integers(1, 5)), int(rng.integers(1, 11)), 20.0)
    sys = random_timeline(rng, int(rng.integers(1, 5)), int(rng.integers(1, 11)), 20.0, labels="PQRS")
    expected = der_bruteforce(turn_tuples(normalize(ref)), turn_tuples(normalize(sys)), 0.25)
    if expected is None:
        with pytest.raises(EmptyReference):
            score(ref, sys)
        return
    assert score(ref, sys).der == pytest.approx(expected, abs=0.1)


def test_golden_fixtures(fixtures_dir):
    golden = json.loads((fixtures_dir / "golden.json").read_text())
    for name, exp in golden.items():
        ref = read_rttm(fixtures_dir / f"{name}.ref.rttm")[0]
        sys = read_rttm(fixtures_dir / f"{name}.sys.rttm")[0]
        uem = read_uem(fixtures_dir / exp["uem"])[name] if exp["uem"] else None
        r = score(ref, sys, ScoringOptions(exp["collar"], uem=uem))
        for key in ("cf", "fa", "mi", "der"):
            assert getattr(r, key) == pytest.approx(exp[key], abs=0.01), (name, key)
        assert r.scored_speech_s == pytest.approx(exp["scored_speech_s"], abs=1e-9)


class TestAggregation:
    def reports(self):
        return [
            DerReport(1, 0, 0, 10, 10, 0, 0, 10, {}, "a"),
            DerReport(3, 0, 0, 10, 30, 0, 0, 30, {}, "b"),
            DerReport(0, 2, 0, 40, 0, 5, 0, 5, {}, "c"),
        ]

    def test_pooled(self):
        assert pooled(self.reports()).der == pytest.approx(100 * 6 / 60)

    def test_macro_per_scenario(self):
        scen = {"a": "dinner", "b": "dinner", "c": "meeting"}
        assert macro_der(self.reports(), scen) == pytest.approx((20.0 + 5.0) / 2)

    def test_macro_per_session(self):
        assert macro_der(self.reports()) == pytest.approx(15.0)

    def test_scenario_file(self, tmp_path):
        (tmp_path / "map").write_text("# header\na dinner\nb meeting\n")
        assert read_scenario_map(tmp_path / "map") == {"a": "dinner", "b": "meeting"}

    def test_sessions_sorted_and_missing_system_is_silence(self):
        refs = [tl(("A", 0, 4), sid="z"), tl(("A", 0, 4), sid="a")]
        reports = score_sessions(refs, [tl(("X", 0, 4), sid="a")], NO_COLLAR)
        assert [r.session_id for r in reports] == ["a", "z"]
        assert reports[0].der == 0.0 and reports[1].mi == 100.0
