"""Diarization error rate with a forgiveness collar and optimal speaker mapping.

Follows the md-eval / dscore conventions: the collar is removed around every
reference turn boundary, overlapped speech is scored by default, and system
speakers are mapped to reference speakers one-to-one so that the mapped
overlap (hence DER) is optimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyReference
from .fusion import hungarian
from .timeline import Interval, Timeline, Uem, merge_intervals, normalize, subtract_intervals


@dataclass(frozen=True)
class ScoringOptions:
    collar: float = 0.25
    score_overlaps: bool = True
    uem: Uem | None = None

    def __post_init__(self) -> None:
        if not (self.collar >= 0 and math.isfinite(self.collar)):
            raise ValueError(f"collar must be a non-negative number, got {self.collar}")


@dataclass(frozen=True)
class DerReport:
    confusion_s: float
    false_alarm_s: float
    missed_s: float
    scored_speech_s: float
    cf: float
    fa: float
    mi: float
    der: float
    mapping: Mapping[str, str] = field(default_factory=dict)
    session_id: str = ""

    def as_record(self) -> dict:
        return {
            "session": self.session_id,
            "cf": self.cf,
            "fa": self.fa,
            "mi": self.mi,
            "der": self.der,
            "scored_speech_s": self.scored_speech_s,
        }


def _report(cf_s: float, fa_s: float, mi_s: float, speech: float, mapping, session_id: str) -> DerReport:
    if not speech > 0:
        raise EmptyReference(f"session {session_id!r} has no scored reference speech")
    cf, fa, mi = 100.0 * cf_s / speech, 100.0 * fa_s / speech, 100.0 * mi_s / speech
    return DerReport(cf_s, fa_s, mi_s, speech, cf, fa, mi, cf + fa + mi, dict(mapping), session_id)


def scored_regions(
    reference: Timeline, opts: ScoringOptions | None = None, system: Timeline | None = None
) -> list[Interval]:
    """UEM (or the joint reference/system span) minus ``[b - collar, b + collar]`` at reference boundaries."""
    opts = opts or ScoringOptions()
    if opts.uem is not None:
        base = list(opts.uem.scored_regions)
    else:
        turns = list(reference.turns) + (list(system.turns) if system is not None else [])
        if not turns:
            return []
        base = [(min(t.start for t in turns), max(t.end for t in turns))]
    if opts.collar <= 0:
        return merge_intervals(base, eps=0.0)
    c = opts.collar
    no_score = merge_intervals(
        [(b - c, b + c) for t in normalize(reference).turns for b in (t.start, t.end)], eps=0.0
    )
    return subtract_intervals(merge_intervals(base, eps=0.0), no_score)


def _activity(spans: Mapping[str, Sequence[Interval]], B: np.ndarray) -> np.ndarray:
    R = len(B) - 1
    A = np.zeros((len(spans), R), dtype=bool)
    for i, iv in enumerate(spans.values()):
        if not iv:
            continue
        diff = np.zeros(R + 1)
        np.add.at(diff, np.searchsorted(B, [s for s, _ in iv]), 1.0)
        np.add.at(diff, np.searchsorted(B, [e for _, e in iv]), -1.0)
        A[i] = np.cumsum(diff[:R]) > 0
    return A


@dataclass
class _Sweep:
    dur: np.ndarray  # scored duration of each atomic region (0 outside scoring)
    ref: np.ndarray
    sys: np.ndarray
    ref_labels: list[str]
    sys_labels: list[str]


def _sweep(reference: Timeline, system: Timeline, regions: Sequence[Interval], score_overlaps: bool = True) -> _Sweep:
    ref_spans = normalize(reference).by_speaker()
    sys_spans = normalize(system).by_speaker()
    pts = {x for iv in regions for x in iv}
    for spans in (ref_spans, sys_spans):
        for iv in spans.values():
            for s, e in iv:
                pts.add(s)
                pts.add(e)
    B = np.asarray(sorted(pts))
    if len(B) < 2:
        empty = np.zeros((0, 0), dtype=bool)
        return _Sweep(np.zeros(0), empty, empty, list(ref_spans), list(sys_spans))
    scored = _activity({"_": list(regions)}, B)[0]
    ref = _activity(ref_spans, B)
    sys = _activity(sys_spans, B)
    dur = np.diff(B) * scored
    if not score_overlaps:
        dur = dur * (ref.sum(axis=0) <= 1)
    return _Sweep(dur, ref, sys, list(ref_spans), list(sys_spans))


def _mapping(sw: _Sweep) -> dict[str, str]:
    if not sw.ref_labels or not sw.sys_labels or sw.dur.size == 0:
        return {}
    overlap = (sw.ref * sw.dur) @ sw.sys.T.astype(np.float64)
    sol = hungarian(-overlap)
    return {sw.ref_labels[i]: sw.sys_labels[j] for i, j in sol.pairs if overlap[i, j] > 0}


def optimal_mapping(
    reference: Timeline, system: Timeline, opts: ScoringOptions | None = None
) -> dict[str, str]:
    """Injective reference -> system map maximizing overlap inside the scored regions."""
    opts = opts or ScoringOptions()
    regions = scored_regions(reference, opts, system)
    return _mapping(_sweep(reference, system, regions, opts.score_overlaps))


def score(reference: Timeline, system: Timeline, opts: ScoringOptions | None = None) -> DerReport:
    """Missed, false-alarm and confusion time over atomic regions of the scored area."""
    opts = opts or ScoringOptions()
    regions = scored_regions(reference, opts, system)
    sw = _sweep(reference, system, regions, opts.score_overlaps)
    mapping = _mapping(sw)
    if sw.dur.size == 0:
        return _report(0.0, 0.0, 0.0, 0.0, mapping, reference.session_id)
    n_ref = sw.ref.sum(axis=0)
    n_sys = sw.sys.sum(axis=0)
    ref_idx = {r: i for i, r in enumerate(sw.ref_labels)}
    sys_idx = {s: j for j, s in enumerate(sw.sys_labels)}
    n_correct = np.zeros_like(n_ref)
    for r, s in mapping.items():
        n_correct += sw.ref[ref_idx[r]] & sw.sys[sys_idx[s]]
    missed = float(np.dot(sw.dur, np.maximum(0, n_ref - n_sys)))
    false_alarm = float(np.dot(sw.dur, np.maximum(0, n_sys - n_ref)))
    confusion = float(np.dot(sw.dur, np.minimum(n_ref, n_sys) - n_correct))
    speech = float(np.dot(sw.dur, n_ref))
    return _report(confusion, false_alarm, missed, speech, mapping, reference.session_id)


def score_sessions(
    references: Iterable[Timeline],
    systems: Iterable[Timeline],
    opts: ScoringOptions | None = None,
    uems: Mapping[str, Uem] | None = None,
) -> list[DerReport]:
    """Score every reference session, in session-id order; a missing system counts as silence."""
    opts = opts or ScoringOptions()
    sys_by_id = {t.session_id: t for t in systems}
    reports = []
    for ref in sorted(references, key=lambda t: t.session_id):
        sys = sys_by_id.get(ref.session_id, Timeline(ref.session_id, ()))
        o = opts
        if uems is not None and ref.session_id in uems:
            o = ScoringOptions(opts.collar, opts.score_overlaps, uems[ref.session_id])
        reports.append(score(ref, sys, o))
    return reports


def pooled(reports: Sequence[DerReport], session_id: str = "ALL") -> DerReport:
    """Error times and speech summed over sessions, then turned into percentages."""
    return _report(
        math.fsum(r.confusion_s for r in reports),
        math.fsum(r.false_alarm_s for r in reports),
        math.fsum(r.missed_s for r in reports),
        math.fsum(r.scored_speech_s for r in reports),
        {},
        session_id,
    )


def macro_der(reports: Sequence[DerReport], scenarios: Mapping[str, str] | None = None) -> float:
    """Unweighted mean DER over scenarios (pooled within each), or over sessions without a map."""
    if not reports:
        raise ValueError("no reports to average")
    if scenarios is None:
        return float(np.mean([r.der for r in reports]))
    groups: dict[str, list[DerReport]] = {}
    for r in reports:
        groups.setdefault(scenarios.get(r.session_id, "unknown"), []).append(r)
    return float(np.mean([pooled(g).der for _, g in sorted(groups.items())]))


def scenario_reports(reports: Sequence[DerReport], scenarios: Mapping[str, str]) -> dict[str, DerReport]:
    groups: dict[str, list[DerReport]] = {}
    for r in reports:
        groups.setdefault(scenarios.get(r.session_id, "unknown"), []).append(r)
    return {name: pooled(g, name) for name, g in sorted(groups.items())}


def read_scenario_map(path) -> dict[str, str]:
    """Whitespace-separated ``session scenario`` lines."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            parts = raw.split()
            if len(parts) >= 2 and not parts[0].startswith("#"):
                out[parts[0]] = parts[1]
    return out


__all__ = [
    "DerReport",
    "ScoringOptions",
    "macro_der",
    "optimal_mapping",
    "pooled",
    "read_scenario_map",
    "scenario_reports",
    "score",
    "score_sessions",
    "scored_regions",
]
