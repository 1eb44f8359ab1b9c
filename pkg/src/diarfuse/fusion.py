"""DOVER-LAP fusion of per-channel diarization hypotheses.

Labels of every hypothesis are first mapped onto one global label set with the
Hungarian algorithm (cost = negative overlap seconds), then the timeline is cut
into atomic regions and each region keeps the speakers with the heaviest
weighted votes, as many as the weighted mean speaker count says.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .timeline import Interval, SpeakerTurn, Timeline, merge_intervals, normalize, overlap_duration, total_speech

RANK_WEIGHTINGS = ("uniform", "linear")
VOTE_DECIMALS = 12


@dataclass(frozen=True)
class AssignmentSolution:
    pairs: tuple[tuple[int, int], ...]
    cost: float

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


@dataclass(frozen=True)
class HypothesisSet:
    session_id: str
    hypotheses: tuple[Timeline, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        hyps = tuple(self.hypotheses)
        if not hyps:
            raise ValueError("a hypothesis set needs at least one hypothesis")
        weights = tuple(float(w) for w in self.weights) or (1.0,) * len(hyps)
        if len(weights) != len(hyps):
            raise ValueError(f"{len(weights)} weights for {len(hyps)} hypotheses")
        if any(not (w > 0 and math.isfinite(w)) for w in weights):
            raise ValueError("hypothesis weights must be positive and finite")
        object.__setattr__(self, "hypotheses", hyps)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class LabelMapping:
    """Per hypothesis, local speaker label -> global label; ``global_labels`` in creation order."""

    maps: tuple[Mapping[str, str], ...]
    global_labels: tuple[str, ...] = field(default=())


# ---------------------------------------------------------------------------
# linear assignment


def _is_close(a: float, b: float, scale: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, scale)


def hungarian(cost) -> AssignmentSolution:
    """Minimum-cost injective assignment of ``min(n, m)`` rows to columns.

    Among optimal assignments the lexicographically smallest row-to-column
    vector wins. The matrix is padded to square with zero-cost dummy columns
    (or rows), which sort after every real index.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = C.shape
    if n == 0 or m == 0:
        return AssignmentSolution((), 0.0)
    if not np.all(np.isfinite(C)):
        raise ValueError("cost entries must be finite")
    N = max(n, m)
    P = np.zeros((N, N))
    P[:n, :m] = C
    r, c = linear_sum_assignment(P)
    best = float(P[r, c].sum())
    scale = float(np.abs(P).sum())

    fixed: list[int] = []
    free_rows = list(range(N))
    free_cols = list(range(N))
    acc = 0.0
    for row in range(N):
        free_rows.remove(row)
        for col in list(free_cols):
            rest_cols = [x for x in free_cols if x != col]
            if free_rows:
                sub = P[np.ix_(free_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                rest = float(sub[rr, cc].sum())
            else:
                rest = 0.0
            if _is_close(acc + P[row, col] + rest, best, scale):
                fixed.append(col)
                acc += P[row, col]
                free_cols.remove(col)
                break
        else:  # pragma: no cover - numerical safety net
            col = free_cols[0]
            fixed.append(col)
            acc += P[row, col]
            free_cols.remove(col)
    pairs = tuple((i, j) for i, j in enumerate(fixed) if i < n and j < m)
    return AssignmentSolution(pairs, float(sum(C[i, j] for i, j in pairs)))


# ---------------------------------------------------------------------------
# alignment


def pairwise_overlap_cost(a: Timeline, b: Timeline) -> np.ndarray:
    """``cost[i][j]`` is minus the seconds speaker i of ``a`` overlaps speaker j of ``b``.

    Speakers are indexed in first-appearance order of each normalized timeline.
    """
    A, B = normalize(a).by_speaker(), normalize(b).by_speaker()
    cost = np.zeros((len(A), len(B)))
    for i, sa in enumerate(A.values()):
        for j, sb in enumerate(B.values()):
            cost[i, j] = -overlap_duration(sa, sb)
    return cost


def _fresh_label(wanted: str, taken: set[str], hyp_index: int) -> str:
    if wanted not in taken:
        return wanted
    base = f"{wanted}@{hyp_index}"
    label, n = base, 1
    while label in taken:
        n += 1
        label = f"{base}.{n}"
    return label


def align_labels(hyps: HypothesisSet) -> LabelMapping:
    """Map every hypothesis onto a shared global label set.

    The hypothesis with most speech (lowest index on ties) is the anchor and
    keeps its own label names. The others are aligned one at a time, in index
    order, against the union of everything mapped so far. Local speakers left
    unmatched, or matched with zero overlap, get fresh global labels.
    """
    timelines = [normalize(t) for t in hyps.hypotheses]
    K = len(timelines)
    speech = [total_speech(t) for t in timelines]
    anchor = max(range(K), key=lambda k: (speech[k], -k))

    footprint: dict[str, list[Interval]] = {}
    order: list[str] = []
    maps: list[dict[str, str]] = [dict() for _ in range(K)]

    for spk, spans in timelines[anchor].by_speaker().items():
        maps[anchor][spk] = spk
        footprint[spk] = list(spans)
        order.append(spk)

    for h in range(K):
        if h == anchor:
            continue
        local = timelines[h].by_speaker()
        names = list(local)
        cost = np.zeros((len(names), len(order)))
        for i, spk in enumerate(names):
            for j, g in enumerate(order):
                cost[i, j] = -overlap_duration(local[spk], footprint[g])
        matched = {i: order[j] for i, j in hungarian(cost).pairs if cost[i, j] < 0}
        taken = set(order)
        for i, spk in enumerate(names):
            if i in matched:
                g = matched[i]
            else:
                g = _fresh_label(spk, taken, h)
                taken.add(g)
                order.append(g)
                footprint[g] = []
            maps[h][spk] = g
        for spk, g in maps[h].items():
            footprint[g] = merge_intervals(footprint[g] + local[spk])
    return LabelMapping(tuple(maps), tuple(order))


# ---------------------------------------------------------------------------
# voting


def round_half_even(x: float, tol: float = 1e-9) -> int:
    """Banker's rounding that treats values within ``tol`` of ``n + 0.5`` as ties."""
    lo = math.floor(x)
    frac = x - lo
    if abs(frac - 0.5) <= tol:
        return int(lo) if lo % 2 == 0 else int(lo) + 1
    return int(lo) + (1 if frac > 0.5 else 0)


def rank_weights(agreement: Sequence[float], scheme: str = "linear") -> np.ndarray:
    """Weights from agreement scores: rank r of K gets ``(K - r + 1) / sum(1..K)``.

    Higher agreement ranks first; ties keep input order.
    """
    K = len(agreement)
    if scheme == "uniform":
        return np.full(K, 1.0 / K)
    if scheme != "linear":
        raise ValueError(f"rank weighting must be one of {RANK_WEIGHTINGS}, got {scheme!r}")
    order = sorted(range(K), key=lambda k: (-agreement[k], k))
    w = np.empty(K)
    denom = K * (K + 1) / 2
    for r, k in enumerate(order, start=1):
        w[k] = (K - r + 1) / denom
    return w


def _mapped(timelines: Sequence[Timeline], mapping: LabelMapping) -> list[dict[str, list[Interval]]]:
    out = []
    for tl, m in zip(timelines, mapping.maps):
        spans: dict[str, list[Interval]] = {}
        for t in tl.turns:
            spans.setdefault(m[t.speaker], []).append((t.start, t.end))
        out.append({g: merge_intervals(s) for g, s in spans.items()})
    return out


def agreement_scores(mapped: Sequence[Mapping[str, list[Interval]]]) -> list[float]:
    """Total overlap seconds each hypothesis shares with all others under the mapping."""
    K = len(mapped)
    scores = [0.0] * K
    for a in range(K):
        for b in range(a + 1, K):
            s = sum(overlap_duration(spans, mapped[b][g]) for g, spans in mapped[a].items() if g in mapped[b])
            scores[a] += s
            scores[b] += s
    return scores


def dover_lap_vote(
    hyps: HypothesisSet, mapping: LabelMapping, rank_weighting: str = "linear"
) -> Timeline:
    """Overlap-aware weighted voting over label-aligned hypotheses."""
    timelines = [normalize(t) for t in hyps.hypotheses]
    mapped = _mapped(timelines, mapping)
    w = rank_weights(agreement_scores(mapped), rank_weighting) * np.asarray(hyps.weights)
    w = w / w.sum()

    labels = list(mapping.global_labels)
    for spans in mapped:
        for g in spans:
            if g not in labels:
                labels.append(g)
    bounds = sorted({x for spans in mapped for iv in spans.values() for s, e in iv for x in (s, e)})
    if len(bounds) < 2:
        return Timeline(hyps.session_id, ())
    B = np.asarray(bounds)
    R = len(B) - 1
    G = len(labels)
    gidx = {g: i for i, g in enumerate(labels)}

    votes = np.zeros((G, R))
    counts = np.zeros(R)
    for k, spans in enumerate(mapped):
        for g, iv in spans.items():
            diff = np.zeros(R + 1)
            s = np.searchsorted(B, [a for a, _ in iv])
            e = np.searchsorted(B, [b for _, b in iv])
            np.add.at(diff, s, 1.0)
            np.add.at(diff, e, -1.0)
            active = np.cumsum(diff[:R]) > 0
            votes[gidx[g]] += w[k] * active
            counts += w[k] * active
    votes = np.round(votes, VOTE_DECIMALS)
    n_hat = np.array([round_half_even(c) for c in counts], dtype=np.int64)

    rank = np.argsort(-votes, axis=0, kind="stable")
    emitted = np.zeros((G, R), dtype=bool)
    for r in np.flatnonzero(n_hat > 0):
        for g in rank[: n_hat[r], r]:
            if votes[g, r] > 0:
                emitted[g, r] = True

    turns = []
    for gi, g in enumerate(labels):
        row = emitted[gi]
        if not row.any():
            continue
        edges = np.diff(np.concatenate(([0], row.astype(np.int8), [0])))
        for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            turns.append(SpeakerTurn(g, bounds[a], bounds[b]))
    return normalize(Timeline(hyps.session_id, tuple(turns)))


def fuse(
    hypotheses: Sequence[Timeline],
    weights: Sequence[float] | None = None,
    rank_weighting: str = "linear",
    session_id: str | None = None,
) -> Timeline:
    """Align and vote in one call."""
    hypotheses = list(hypotheses)
    sid = session_id if session_id is not None else (hypotheses[0].session_id if hypotheses else "")
    hs = HypothesisSet(sid, tuple(hypotheses), tuple(weights) if weights is not None else ())
    return dover_lap_vote(hs, align_labels(hs), rank_weighting)


__all__ = [
    "AssignmentSolution",
    "HypothesisSet",
    "LabelMapping",
    "RANK_WEIGHTINGS",
    "agreement_scores",
    "align_labels",
    "dover_lap_vote",
    "fuse",
    "hungarian",
    "pairwise_overlap_cost",
    "rank_weights",
    "round_half_even",
]
