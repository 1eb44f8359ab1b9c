"""Per-segment local speaker activities and embeddings.

The neural encoder is out of scope; its per-segment output arrives as a
*segment bundle* file (JSON lines). The first record is a header::

    {"type": "header", "session_id": "S26", "S": 4, "T_nominal": 800, "D": 256,
     "frame_rate": 10.0, "embedding_source": "eend_vc"}

followed by one record per segment::

    {"type": "segment", "segment_index": 0, "start": 0.0, "T_actual": 800,
     "activities": [... S*T_actual floats, row-major ...],
     "embeddings": [... S*D floats, row-major ...]}

Floats are written with ``repr`` precision so a write/read cycle is exact.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.ndimage import median_filter

from .errors import MissingLabel, ParseError, SchemaError
from .timeline import SpeakerTurn, Timeline, normalize

log = logging.getLogger(__name__)

TILING_TOL = 1e-6


class EmbeddingSource(str, enum.Enum):
    EEND_VC = "eend_vc"
    EXTERNAL_EXTRACTOR = "external_extractor"


@dataclass(frozen=True, eq=False)
class SegmentBundle:
    """Encoder output for one segment: ``S x T`` activities and ``S x D`` embeddings."""

    segment_index: int
    start: float
    frame_rate: float
    activities: np.ndarray
    embeddings: np.ndarray
    embedding_source: EmbeddingSource = EmbeddingSource.EEND_VC
    session_id: str = ""

    def __post_init__(self) -> None:
        act = np.array(self.activities, dtype=np.float64)
        emb = np.array(self.embeddings, dtype=np.float64)
        if act.ndim != 2 or act.shape[0] < 1 or act.shape[1] < 1:
            raise SchemaError(f"segment {self.segment_index}: activities must be S x T with S, T >= 1, got {act.shape}")
        if emb.ndim != 2 or emb.shape[1] < 1:
            raise SchemaError(f"segment {self.segment_index}: embeddings must be S x D with D >= 1, got {emb.shape}")
        if emb.shape[0] != act.shape[0]:
            raise SchemaError(f"segment {self.segment_index}: {act.shape[0]} activity rows but {emb.shape[0]} embeddings")
        if not np.all(np.isfinite(act)) or act.min() < 0.0 or act.max() > 1.0:
            raise SchemaError(f"segment {self.segment_index}: activities must lie in [0, 1]")
        if not np.all(np.isfinite(emb)):
            raise SchemaError(f"segment {self.segment_index}: non-finite embedding values")
        if not (self.frame_rate > 0 and math.isfinite(self.frame_rate)):
            raise SchemaError(f"segment {self.segment_index}: frame_rate must be positive")
        act.setflags(write=False)
        emb.setflags(write=False)
        object.__setattr__(self, "activities", act)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "embedding_source", EmbeddingSource(self.embedding_source))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @property
    def n_speakers(self) -> int:
        return self.activities.shape[0]

    @property
    def n_frames(self) -> int:
        return self.activities.shape[1]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    @property
    def end(self) -> float:
        return self.start + self.duration

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SegmentBundle):
            return NotImplemented
        return (
            self.segment_index == other.segment_index
            and self.start == other.start
            and self.frame_rate == other.frame_rate
            and self.embedding_source == other.embedding_source
            and self.session_id == other.session_id
            and np.array_equal(self.activities, other.activities)
            and np.array_equal(self.embeddings, other.embeddings)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class LocalStream:
    segment_index: int
    local_speaker: int
    binary_activity: np.ndarray
    embedding: np.ndarray

    @property
    def active_frames(self) -> int:
        return int(np.count_nonzero(self.binary_activity))


# ---------------------------------------------------------------------------
# file format

PathOrFile = Union[str, "os.PathLike[str]", IO[str]]


def _check_session(bundles: Sequence[SegmentBundle], nominal_frames: int | None = None) -> None:
    """Shape consistency and segment tiling; raises SchemaError."""
    if not bundles:
        return
    first = bundles[0]
    S, D, fr = first.n_speakers, first.dim, first.frame_rate
    T_nom = nominal_frames if nominal_frames is not None else first.n_frames
    for pos, b in enumerate(bundles):
        if b.segment_index != pos:
            raise SchemaError(f"segment indices must be 0..n-1 without gaps; found {b.segment_index} at position {pos}")
        if b.n_speakers != S or b.dim != D:
            raise SchemaError(
                f"segment {b.segment_index}: shape S={b.n_speakers}, D={b.dim} differs from S={S}, D={D}"
            )
        if b.frame_rate != fr:
            raise SchemaError(f"segment {b.segment_index}: frame rate {b.frame_rate} differs from {fr}")
        if pos < len(bundles) - 1 and b.n_frames != T_nom:
            raise SchemaError(f"segment {b.segment_index}: only the last segment may be shorter than {T_nom} frames")
        if b.n_frames > T_nom:
            raise SchemaError(f"segment {b.segment_index}: {b.n_frames} frames exceed nominal {T_nom}")
        if pos > 0:
            prev = bundles[pos - 1]
            if abs(b.start - prev.end) > TILING_TOL:
                raise SchemaError(f"segment {b.segment_index} starts at {b.start}, previous ends at {prev.end}")


def read_bundles(path: PathOrFile) -> list[SegmentBundle]:
    """Parse a segment bundle file; bundles come back sorted by index."""
    owned = isinstance(path, (str, os.PathLike))
    fh = open(path, "r", encoding="utf-8") if owned else path
    name = str(path) if owned else getattr(fh, "name", None)
    try:
        header = None
        raw_segments = []
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, path=name) from None
            if not isinstance(rec, dict):
                raise ParseError("record must be an object", line=lineno, path=name)
            kind = rec.get("type")
            if kind == "header":
                if header is not None:
                    raise ParseError("duplicate header record", line=lineno, path=name)
                header = (lineno, rec)
            elif kind == "segment":
                if header is None:
                    raise ParseError("segment record before header", line=lineno, path=name)
                raw_segments.append((lineno, rec))
            else:
                raise ParseError(f"unknown record type {kind!r}", line=lineno, path=name)
    finally:
        if owned:
            fh.close()
    if header is None:
        raise ParseError("missing header record", line=None, path=name)

    hline, h = header
    try:
        session_id = str(h["session_id"])
        S, T_nom, D = int(h["S"]), int(h["T_nominal"]), int(h["D"])
        frame_rate = float(h["frame_rate"])
        source = EmbeddingSource(h.get("embedding_source", "eend_vc"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", line=hline, path=name) from None
    if S < 1 or T_nom < 1 or D < 1:
        raise SchemaError(f"header requires S, T_nominal, D >= 1 (got {S}, {T_nom}, {D})")

    bundles = []
    for lineno, rec in raw_segments:
        try:
            idx = int(rec["segment_index"])
            start = float(rec["start"])
            T = int(rec["T_actual"])
            act = np.asarray(rec["activities"], dtype=np.float64)
            emb = np.asarray(rec["embeddings"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad segment record: {exc}", line=lineno, path=name) from None
        if act.ndim != 1 or act.size != S * T:
            raise SchemaError(f"line {lineno}: expected {S}x{T} activities, got {act.size} values")
        if emb.ndim != 1 or emb.size % S != 0:
            raise SchemaError(f"line {lineno}: embeddings size {emb.size} is not a multiple of S={S}")
        if emb.size != S * D:
            raise SchemaError(f"line {lineno}: embedding dimension {emb.size // S} differs from header D={D}")
        bundles.append(
            SegmentBundle(
                segment_index=idx,
                start=start,
                frame_rate=frame_rate,
                activities=act.reshape(S, T),
                embeddings=emb.reshape(S, D),
                embedding_source=source,
                session_id=session_id,
            )
        )
    bundles.sort(key=lambda b: b.segment_index)
    _check_session(bundles, nominal_frames=T_nom)
    return bundles


def _floats(a: np.ndarray) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def write_bundles(bundles: Sequence[SegmentBundle], path: PathOrFile, session_id: str | None = None) -> None:
    bundles = sorted(bundles, key=lambda b: b.segment_index)
    if not bundles:
        raise SchemaError("cannot write an empty bundle list")
    _check_session(bundles, nominal_frames=max(b.n_frames for b in bundles))
    first = bundles[0]
    header = {
        "type": "header",
        "session_id": session_id if session_id is not None else first.session_id,
        "S": first.n_speakers,
        "T_nominal": max(b.n_frames for b in bundles),
        "D": first.dim,
        "frame_rate": first.frame_rate,
        "embedding_source": first.embedding_source.value,
    }
    lines = [json.dumps(header)]
    for b in bundles:
        lines.append(
            json.dumps(
                {
                    "type": "segment",
                    "segment_index": b.segment_index,
                    "start": b.start,
                    "T_actual": b.n_frames,
                    "activities": _floats(b.activities),
                    "embeddings": _floats(b.embeddings),
                }
            )
        )
    text = "\n".join(lines) + "\n"
    if isinstance(path, (str, os.PathLike)):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        path.write(text)


# ---------------------------------------------------------------------------
# streams


def unit_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def binarize(bundle: SegmentBundle, threshold: float = 0.5, median_window: int = 11) -> list[LocalStream]:
    """Threshold activities (``>=``), then median-filter each stream.

    The filter pads edges by replication. Embeddings are unit-normalized here so
    cosine distance downstream is ``1 - dot``.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if median_window < 1 or median_window % 2 == 0:
        raise ValueError(f"median_window must be a positive odd integer, got {median_window}")
    hard = (bundle.activities >= threshold).astype(np.uint8)
    if median_window > 1:
        hard = median_filter(hard, size=(1, median_window), mode="nearest")
    emb = unit_normalize(bundle.embeddings)
    streams = []
    for j in range(bundle.n_speakers):
        binary = hard[j].astype(bool)
        binary.setflags(write=False)
        e = emb[j].copy()
        e.setflags(write=False)
        streams.append(LocalStream(bundle.segment_index, j, binary, e))
    return streams


def select_active_streams(
    streams: Iterable[LocalStream], min_active_seconds: float = 0.5, frame_rate: float = 10.0
) -> list[LocalStream]:
    """Keep streams with at least ``min_active_seconds`` of speech.

    Streams with no active frame, or a zero embedding, are always dropped.
    """
    if min_active_seconds < 0:
        raise ValueError("min_active_seconds must be >= 0")
    kept = []
    for s in streams:
        n = s.active_frames
        if n == 0 or not np.any(s.embedding):
            continue
        if n / frame_rate >= min_active_seconds:
            kept.append(s)
    return kept


def frame_runs(binary: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of true frames as half-open ``(first, last + 1)`` pairs."""
    b = np.asarray(binary, dtype=np.int8)
    if b.size == 0:
        return []
    edges = np.diff(np.concatenate(([0], b, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def streams_to_timeline(
    streams: Sequence[LocalStream],
    assignment,
    segment_start_times: Mapping[int, float] | Sequence[float],
    frame_rate: float,
    session_id: str = "",
) -> Timeline:
    """Stitch labelled streams into a normalized timeline.

    ``assignment`` is a ClusterAssignment or a plain label sequence aligned with
    ``streams``. Frame ``k`` of a segment starting at ``t0`` covers
    ``[t0 + k/frame_rate, t0 + (k+1)/frame_rate)``; label ``c`` becomes ``spk<c>``.
    """
    labels = getattr(assignment, "labels", assignment)
    labels = list(labels) if labels is not None else []
    turns = []
    for i, s in enumerate(streams):
        if i >= len(labels) or labels[i] is None or int(labels[i]) < 0:
            raise MissingLabel(f"stream {i} (segment {s.segment_index}, local speaker {s.local_speaker}) has no label")
        name = f"spk{int(labels[i])}"
        t0 = float(segment_start_times[s.segment_index])
        for a, b in frame_runs(s.binary_activity):
            turns.append(SpeakerTurn(name, t0 + a / frame_rate, t0 + b / frame_rate))
    return normalize(Timeline(session_id, tuple(turns)))


def bundles_to_streams(
    bundles: Sequence[SegmentBundle],
    threshold: float = 0.5,
    median_window: int = 11,
    min_active_seconds: float = 0.5,
) -> list[LocalStream]:
    out: list[LocalStream] = []
    for b in bundles:
        out.extend(select_active_streams(binarize(b, threshold, median_window), min_active_seconds, b.frame_rate))
    return out


__all__ = [
    "EmbeddingSource",
    "LocalStream",
    "SegmentBundle",
    "binarize",
    "bundles_to_streams",
    "frame_runs",
    "read_bundles",
    "select_active_streams",
    "streams_to_timeline",
    "unit_normalize",
    "write_bundles",
]
