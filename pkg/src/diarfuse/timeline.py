"""Speaker timelines, interval algebra and RTTM/UEM file I/O.

A :class:`Timeline` is the one representation used for references, per-channel
hypotheses and fused output. Times are float seconds; every comparison that
decides whether two boundaries coincide goes through :data:`EPS`.

>>> tl = Timeline("S01", (SpeakerTurn("A", 0, 2), SpeakerTurn("A", 1, 3)))
>>> normalize(tl).turns
(SpeakerTurn(speaker='A', start=0.0, end=3.0),)
"""

from __future__ import annotations

import io
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import IO, Iterable, Iterator, Sequence, TypeAlias, Union

from .errors import InvalidTurn, ParseError

EPS = 1e-9

Interval: TypeAlias = tuple[float, float]
PathOrFile: TypeAlias = Union[str, "os.PathLike[str]", IO[str]]


@dataclass(frozen=True, order=True)
class SpeakerTurn:
    speaker: str
    start: float
    end: float

    def __post_init__(self) -> None:
        if not isinstance(self.speaker, str) or not self.speaker or any(c.isspace() for c in self.speaker):
            raise InvalidTurn(f"invalid speaker label {self.speaker!r}")
        start, end = float(self.start), float(self.end)
        if not (math.isfinite(start) and math.isfinite(end)):
            raise InvalidTurn(f"non-finite turn times ({start}, {end})")
        if start < 0:
            raise InvalidTurn(f"negative start time {start}")
        if end <= start:
            raise InvalidTurn(f"turn {self.speaker!r} has end {end} <= start {start}")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Timeline:
    session_id: str
    turns: tuple[SpeakerTurn, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))

    def __len__(self) -> int:
        return len(self.turns)

    def __iter__(self) -> Iterator[SpeakerTurn]:
        return iter(self.turns)

    def speakers(self) -> list[str]:
        """Speaker labels in first-appearance order."""
        return list(dict.fromkeys(t.speaker for t in self.turns))

    def by_speaker(self) -> dict[str, list[Interval]]:
        out: dict[str, list[Interval]] = {}
        for t in self.turns:
            out.setdefault(t.speaker, []).append((t.start, t.end))
        return out

    def span(self) -> Interval | None:
        if not self.turns:
            return None
        return min(t.start for t in self.turns), max(t.end for t in self.turns)

    def relabel(self, mapping: dict[str, str]) -> "Timeline":
        return Timeline(self.session_id, tuple(SpeakerTurn(mapping.get(t.speaker, t.speaker), t.start, t.end) for t in self.turns))

    def restrict(self, start: float, end: float) -> "Timeline":
        """Clip every turn to ``[start, end)``, dropping turns that vanish."""
        kept = []
        for t in self.turns:
            s, e = max(t.start, start), min(t.end, end)
            if e - s > EPS:
                kept.append(SpeakerTurn(t.speaker, s, e))
        return Timeline(self.session_id, tuple(kept))


@dataclass(frozen=True)
class Uem:
    session_id: str
    scored_regions: tuple[Interval, ...] = field(default=())

    def __post_init__(self) -> None:
        regions = tuple((float(s), float(e)) for s, e in self.scored_regions)
        prev_end = -math.inf
        for s, e in regions:
            if not e > s:
                raise InvalidTurn(f"UEM region ({s}, {e}) has end <= start")
            if s < prev_end:
                raise InvalidTurn(f"UEM regions overlap or are unsorted at ({s}, {e})")
            prev_end = e
        object.__setattr__(self, "scored_regions", regions)


# ---------------------------------------------------------------------------
# interval algebra


def merge_intervals(intervals: Iterable[Interval], eps: float = EPS) -> list[Interval]:
    """Union of intervals as a sorted disjoint list; gaps up to ``eps`` are closed."""
    ordered = sorted((float(s), float(e)) for s, e in intervals if e > s)
    merged: list[list[float]] = []
    for s, e in ordered:
        if merged and s <= merged[-1][1] + eps:
            if e > merged[-1][1]:
                merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def intersect_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    """Intersection of two sorted disjoint interval lists."""
    out: list[Interval] = []
    i = j = 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if e > s:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def subtract_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    """``a`` minus ``b``; both sorted and disjoint."""
    out: list[Interval] = []
    j = 0
    for s, e in a:
        cur = s
        while j < len(b) and b[j][1] <= cur:
            j += 1
        k = j
        while k < len(b) and b[k][0] < e:
            if b[k][0] > cur:
                out.append((cur, b[k][0]))
            cur = max(cur, b[k][1])
            k += 1
        if e > cur:
            out.append((cur, e))
    return out


def overlap_duration(a: Sequence[Interval], b: Sequence[Interval]) -> float:
    """Total length of the intersection of two sorted disjoint interval lists."""
    total = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        s = a[i][0] if a[i][0] > b[j][0] else b[j][0]
        e = a[i][1] if a[i][1] < b[j][1] else b[j][1]
        if e > s:
            total += e - s
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


# ---------------------------------------------------------------------------
# canonical form


def _turn_key(t: SpeakerTurn) -> tuple[float, float, str]:
    return (t.start, t.end, t.speaker)


def normalize(timeline: Timeline) -> Timeline:
    """Canonical form: same-speaker overlapping or abutting turns merged, sorted.

    Turns of different speakers are left overlapping. Idempotent.
    """
    for t in timeline.turns:
        if not t.end > t.start:
            raise InvalidTurn(f"turn {t!r} has end <= start")
    merged: list[SpeakerTurn] = []
    for speaker, spans in timeline.by_speaker().items():
        for s, e in merge_intervals(spans):
            merged.append(SpeakerTurn(speaker, s, e))
    merged.sort(key=_turn_key)
    return Timeline(timeline.session_id, tuple(merged))


def total_speech(timeline: Timeline) -> float:
    """Sum of turn durations; overlapped speech counts once per speaker."""
    return float(math.fsum(t.end - t.start for t in timeline.turns))


# ---------------------------------------------------------------------------
# RTTM


def _open_text(dest: PathOrFile, mode: str):
    if isinstance(dest, (str, os.PathLike)):
        return open(dest, mode, encoding="utf-8"), True
    return dest, False


def _fmt_ms(value: float) -> Decimal:
    return Decimal(f"{value:.3f}")


def parse_rttm(lines: Iterable[str], path: str | None = None) -> list[Timeline]:
    sessions: dict[str, list[SpeakerTurn]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        parts = line.split()
        if parts[0] != "SPEAKER":
            continue
        if len(parts) < 8:
            raise ParseError(f"expected at least 8 fields, got {len(parts)}", line=lineno, path=path)
        session, tbeg, tdur, speaker = parts[1], parts[3], parts[4], parts[7]
        try:
            beg, dur = Decimal(tbeg), Decimal(tdur)
        except InvalidOperation:
            raise ParseError(f"bad time fields {tbeg!r} {tdur!r}", line=lineno, path=path) from None
        if not (beg.is_finite() and dur.is_finite()):
            raise ParseError(f"non-finite time fields {tbeg!r} {tdur!r}", line=lineno, path=path)
        if dur <= 0 or beg < 0:
            raise ParseError(f"non-positive duration or negative onset ({tbeg}, {tdur})", line=lineno, path=path)
        if speaker == "<NA>":
            raise ParseError("missing speaker label", line=lineno, path=path)
        turn = SpeakerTurn(speaker, float(beg), float(beg + dur))
        sessions.setdefault(session, []).append(turn)
    return [normalize(Timeline(sid, tuple(turns))) for sid, turns in sessions.items()]


def read_rttm(path: PathOrFile) -> list[Timeline]:
    """Read every SPEAKER record, one normalized :class:`Timeline` per session.

    Sessions are returned in first-appearance order. The channel field is ignored.
    Onset plus duration is summed in decimal so that millisecond values written
    by :func:`write_rttm` come back as the same floats.
    """
    fh, owned = _open_text(path, "r")
    name = str(path) if owned else getattr(fh, "name", None)
    try:
        return parse_rttm(fh, path=name)
    finally:
        if owned:
            fh.close()


def format_rttm(timelines: Timeline | Iterable[Timeline]) -> str:
    if isinstance(timelines, Timeline):
        timelines = [timelines]
    out = io.StringIO()
    for tl in timelines:
        # snap to the file's millisecond resolution first, so the written order
        # and merges are those a reader will see
        snapped = []
        for t in tl.turns:
            beg, end = _fmt_ms(t.start), _fmt_ms(t.end)
            if end > beg:
                snapped.append(SpeakerTurn(t.speaker, float(beg), float(end)))
        for t in normalize(Timeline(tl.session_id, tuple(snapped))).turns:
            beg = _fmt_ms(t.start)
            dur = _fmt_ms(t.end) - beg
            out.write(f"SPEAKER {tl.session_id} 1 {beg} {dur} <NA> <NA> {t.speaker} <NA> <NA>\n")
    return out.getvalue()


def write_rttm(timelines: Timeline | Iterable[Timeline], path: PathOrFile) -> None:
    """Write normalized turns with 3-decimal onsets and durations, channel ``1``."""
    text = format_rttm(timelines)
    fh, owned = _open_text(path, "w")
    try:
        fh.write(text)
    finally:
        if owned:
            fh.close()


# ---------------------------------------------------------------------------
# UEM


def read_uem(path: PathOrFile) -> dict[str, Uem]:
    fh, owned = _open_text(path, "r")
    name = str(path) if owned else getattr(fh, "name", None)
    regions: dict[str, list[Interval]] = defaultdict(list)
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(("#", ";")):
                continue
            parts = line.split()
            if len(parts) < 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", line=lineno, path=name)
            try:
                s, e = float(parts[2]), float(parts[3])
            except ValueError:
                raise ParseError(f"bad time fields {parts[2]!r} {parts[3]!r}", line=lineno, path=name) from None
            if not (math.isfinite(s) and math.isfinite(e)) or e <= s:
                raise ParseError(f"invalid region ({parts[2]}, {parts[3]})", line=lineno, path=name)
            regions[parts[0]].append((s, e))
    finally:
        if owned:
            fh.close()
    return {sid: Uem(sid, tuple(merge_intervals(r, eps=0.0))) for sid, r in regions.items()}


def write_uem(uems: Uem | Iterable[Uem], path: PathOrFile) -> None:
    if isinstance(uems, Uem):
        uems = [uems]
    lines = [f"{u.session_id} 1 {s:.3f} {e:.3f}\n" for u in uems for s, e in u.scored_regions]
    fh, owned = _open_text(path, "w")
    try:
        fh.writelines(lines)
    finally:
        if owned:
            fh.close()


def timeline_from_tuples(session_id: str, turns: Iterable[tuple[str, float, float]]) -> Timeline:
    """Convenience constructor from ``(speaker, start, end)`` tuples."""
    return Timeline(session_id, tuple(SpeakerTurn(s, a, b) for s, a, b in turns))


__all__ = [
    "EPS",
    "Interval",
    "SpeakerTurn",
    "Timeline",
    "Uem",
    "format_rttm",
    "intersect_intervals",
    "merge_intervals",
    "normalize",
    "overlap_duration",
    "parse_rttm",
    "read_rttm",
    "read_uem",
    "subtract_intervals",
    "timeline_from_tuples",
    "total_speech",
    "write_rttm",
    "write_uem",
]
