"""End-to-end orchestration: per-channel clustering, fusion and pseudo-label export.

A session is a mapping ``channel name -> list of SegmentBundle``. Each channel
is diarized independently; channels that fail are reported and left out of
the vote. The fused timeline is rasterized back onto every channel's segment
grid as pseudo-labels for an external adaptation step, whose refreshed bundles
can be fed to :func:`run_second_pass`.
"""

from __future__ import annotations

import configparser
import io
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import logs
from .clustering import ClusteringParams, cluster_session
from .errors import AllChannelsFailed, ConfigError, DiarizationError, ParseError, SchemaError
from .fusion import RANK_WEIGHTINGS, fuse
from .local_io import SegmentBundle, bundles_to_streams, frame_runs, read_bundles, streams_to_timeline
from .scoring import ScoringOptions
from .timeline import SpeakerTurn, Timeline, normalize, write_rttm

log = logging.getLogger(__name__)

WORKERS_ENV = "DIARFUSE_WORKERS"


@dataclass(frozen=True)
class PipelineConfig:
    segment_size: float = 80.0
    max_speakers: int = 4
    threshold: float = 0.5
    median_window: int = 11
    min_active_seconds: float = 0.5
    clustering: ClusteringParams = field(default_factory=ClusteringParams)
    rank_weighting: str = "linear"
    channel_weights: Mapping[str, float] = field(default_factory=dict)
    scoring: ScoringOptions = field(default_factory=ScoringOptions)
    channels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    output_dir: str = "diarfuse_out"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.segment_size <= 0:
            raise ConfigError("segment_size must be positive")
        if self.max_speakers < 1:
            raise ConfigError("max_speakers must be >= 1")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must be in (0, 1)")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ConfigError("median_window must be a positive odd integer")
        if self.min_active_seconds < 0:
            raise ConfigError("min_active_seconds must be >= 0")
        if self.rank_weighting not in RANK_WEIGHTINGS:
            raise ConfigError(f"rank_weighting must be one of {RANK_WEIGHTINGS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(not w > 0 for w in self.channel_weights.values()):
            raise ConfigError("channel weights must be positive")


# ---------------------------------------------------------------------------
# configuration file: INI sections, every key must be known

_SECTIONS = {
    "pipeline": {"segment_size": float, "max_speakers": int, "output_dir": str, "workers": int},
    "binarize": {"threshold": float, "median_window": int, "min_active_seconds": float},
    "clustering": {"stop_threshold": float, "penalty": float, "max_iter": int, "seed": int, "algorithm": str},
    "fusion": {"rank_weighting": str},
    "scoring": {"collar": float, "score_overlaps": bool},
}
_FREE_SECTIONS = ("channels", "channel_weights")


def _coerce(kind, raw: str, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def config_from_mapping(values: Mapping[str, Mapping[str, str]], base: PipelineConfig | None = None) -> PipelineConfig:
    """Layer string key/values (``{section: {key: value}}``) over ``base``."""
    cfg = base or PipelineConfig()
    top: dict[str, Any] = {}
    clus: dict[str, Any] = {}
    scor: dict[str, Any] = {}
    channels = dict(cfg.channels)
    weights = dict(cfg.channel_weights)
    for section, items in values.items():
        if section in _FREE_SECTIONS:
            for key, raw in items.items():
                if section == "channels":
                    channels[key] = tuple(raw.split())
                else:
                    weights[key] = _coerce(float, raw, f"[{section}] {key}")
            continue
        known = _SECTIONS.get(section)
        if known is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"unknown config key [{section}] {key}")
            value = _coerce(known[key], raw, f"[{section}] {key}")
            if section == "clustering":
                clus[key] = value
            elif section == "scoring":
                scor[key] = value
            else:
                top[key] = value
    try:
        clustering = replace(cfg.clustering, **clus)
        scoring = replace(cfg.scoring, **scor)
        return replace(cfg, clustering=clustering, scoring=scoring, channels=channels, channel_weights=weights, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_overrides(items: Sequence[str]) -> dict[str, dict[str, str]]:
    """``section.key=value`` strings to a nested mapping."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        m = re.fullmatch(r"\s*([A-Za-z_]+)\.([^=\s]+)\s*=(.*)", item)
        if not m:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out.setdefault(m.group(1), {})[m.group(2)] = m.group(3).strip()
    return out


def load_config(path: str | os.PathLike | None = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Defaults, then the INI file, then ``section.key=value`` overrides, then the worker env var."""
    cfg = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str  # keep channel/session names case-sensitive
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = config_from_mapping({s: dict(parser.items(s)) for s in parser.sections()}, cfg)
    if overrides:
        cfg = config_from_mapping(parse_overrides(overrides), cfg)
    env = os.environ.get(WORKERS_ENV)
    if env:
        cfg = replace(cfg, workers=_coerce(int, env, WORKERS_ENV))
    return cfg


def dump_config(cfg: PipelineConfig | None = None) -> str:
    cfg = cfg or PipelineConfig()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    parser["pipeline"] = {
        "segment_size": str(cfg.segment_size),
        "max_speakers": str(cfg.max_speakers),
        "output_dir": cfg.output_dir,
        "workers": str(cfg.workers),
    }
    parser["binarize"] = {
        "threshold": str(cfg.threshold),
        "median_window": str(cfg.median_window),
        "min_active_seconds": str(cfg.min_active_seconds),
    }
    parser["clustering"] = {k: str(v) for k, v in asdict(cfg.clustering).items()}
    parser["fusion"] = {"rank_weighting": cfg.rank_weighting}
    parser["scoring"] = {"collar": str(cfg.scoring.collar), "score_overlaps": str(cfg.scoring.score_overlaps).lower()}
    parser["channel_weights"] = {k: str(v) for k, v in sorted(cfg.channel_weights.items())}
    parser["channels"] = {k: " ".join(v) for k, v in sorted(cfg.channels.items())}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class ChannelResult:
    channel: str
    timeline: Timeline
    diagnostics: Mapping[str, Any]


@dataclass(frozen=True)
class SessionResult:
    session_id: str
    per_channel: Mapping[str, Timeline]
    diagnostics: Mapping[str, Mapping[str, Any]]
    fused: Timeline
    failures: Mapping[str, str]
    iteration: int = 1


def _session_of(bundles: Sequence[SegmentBundle]) -> str:
    return bundles[0].session_id if bundles else ""


def run_channel(
    bundles: Sequence[SegmentBundle], cfg: PipelineConfig | None = None, channel: str = "", session_id: str | None = None
) -> ChannelResult:
    """Binarize, select, cluster and stitch one channel.

    Errors keep their type and gain a ``channel`` attribute.
    """
    cfg = cfg or PipelineConfig()
    sid = session_id if session_id is not None else _session_of(bundles)
    try:
        with logs.stage(log, "streams", sid, channel):
            streams = bundles_to_streams(bundles, cfg.threshold, cfg.median_window, cfg.min_active_seconds)
        if not streams:
            log.warning("no active streams; empty timeline", extra={"session": sid, "channel": channel, "stage": "streams"})
            diag = {"n_streams": 0, "ahc_k": 0, "k": 0, "violations": 0, "violating_segments": 0}
            return ChannelResult(channel, Timeline(sid, ()), diag)
        with logs.stage(log, "cluster", sid, channel):
            assignment = cluster_session(streams, cfg.max_speakers, cfg.clustering)
        with logs.stage(log, "stitch", sid, channel):
            starts = {b.segment_index: b.start for b in bundles}
            tl = streams_to_timeline(streams, assignment, starts, bundles[0].frame_rate, sid)
    except DiarizationError as exc:
        exc.channel = channel
        raise
    return ChannelResult(channel, tl, dict(assignment.diagnostics))


def run_session(
    channels: Mapping[str, Sequence[SegmentBundle]],
    cfg: PipelineConfig | None = None,
    session_id: str | None = None,
    iteration: int = 1,
) -> SessionResult:
    """Diarize every channel (concurrently, up to ``cfg.workers``) and fuse the successes."""
    cfg = cfg or PipelineConfig()
    names = sorted(channels)
    if session_id is None:
        session_id = next((_session_of(channels[n]) for n in names if channels[n]), "")

    def work(name: str):
        try:
            return run_channel(channels[name], cfg, name, session_id)
        except DiarizationError as exc:
            return exc

    if cfg.workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(work, names))
    else:
        outcomes = [work(n) for n in names]

    per_channel: dict[str, Timeline] = {}
    diagnostics: dict[str, Mapping[str, Any]] = {}
    failures: dict[str, str] = {}
    for name, out in zip(names, outcomes):
        if isinstance(out, ChannelResult):
            per_channel[name] = out.timeline
            diagnostics[name] = out.diagnostics
        else:
            failures[name] = f"{type(out).__name__}: {out}"
            log.warning(
                f"channel excluded from fusion: {failures[name]}",
                extra={"session": session_id, "channel": name, "stage": "channel"},
            )
    if not per_channel:
        raise AllChannelsFailed(session_id, failures)
    ok = list(per_channel)
    weights = [cfg.channel_weights.get(n, 1.0) for n in ok]
    with logs.stage(log, "fuse", session_id):
        fused = fuse([per_channel[n] for n in ok], weights, cfg.rank_weighting, session_id)
    return SessionResult(session_id, per_channel, diagnostics, fused, failures, iteration)


def run_second_pass(
    refreshed: Mapping[str, Sequence[SegmentBundle]],
    cfg: PipelineConfig | None = None,
    previous: SessionResult | int = 1,
    session_id: str | None = None,
) -> SessionResult:
    """Re-run the session on bundles produced by the adapted encoder."""
    prev = previous.iteration if isinstance(previous, SessionResult) else int(previous)
    if session_id is None and isinstance(previous, SessionResult):
        session_id = previous.session_id
    return run_session(refreshed, cfg, session_id, iteration=prev + 1)


# ---------------------------------------------------------------------------
# pseudo-labels


def natural_key(label: str):
    return [(0, int(p), "") if p.isdigit() else (1, 0, p) for p in re.split(r"(\d+)", label) if p]


@dataclass(frozen=True, eq=False)
class SsaSegment:
    segment_index: int
    start: float
    activities: np.ndarray  # n_speakers x T, uint8


@dataclass(frozen=True, eq=False)
class ChannelLabels:
    session_id: str
    channel: str
    frame_rate: float
    speakers: tuple[str, ...]
    timeline: Timeline
    segments: tuple[SsaSegment, ...]

    @property
    def grid(self) -> list[tuple[int, float, int]]:
        return [(s.segment_index, s.start, s.activities.shape[1]) for s in self.segments]


@dataclass(frozen=True, eq=False)
class SsaLabelSet:
    session_id: str
    speakers: tuple[str, ...]
    channels: Mapping[str, ChannelLabels]


def _span_arrays(timeline: Timeline) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-speaker sorted start and end arrays of a normalized timeline."""
    out = {}
    for spk, spans in normalize(timeline).by_speaker().items():
        arr = np.asarray(spans, dtype=np.float64).reshape(-1, 2)
        out[spk] = (arr[:, 0], arr[:, 1])
    return out


def _rasterize_spans(
    spans: Mapping[str, tuple[np.ndarray, np.ndarray]], speakers: Sequence[str], start: float, n_frames: int, frame_rate: float
) -> np.ndarray:
    centres = start + (np.arange(n_frames) + 0.5) / frame_rate
    out = np.zeros((len(speakers), n_frames), dtype=np.uint8)
    if n_frames == 0:
        return out
    for i, spk in enumerate(speakers):
        if spk not in spans:
            continue
        starts, ends = spans[spk]
        # only turns ending after the first centre and starting at or before the last one
        lo = int(np.searchsorted(ends, centres[0], side="right"))
        hi = int(np.searchsorted(starts, centres[-1], side="right"))
        for s, e in zip(starts[lo:hi], ends[lo:hi]):
            a = int(np.searchsorted(centres, s, side="left"))
            b = int(np.searchsorted(centres, e, side="left"))
            out[i, a:b] = 1
    return out


def rasterize(timeline: Timeline, speakers: Sequence[str], start: float, n_frames: int, frame_rate: float) -> np.ndarray:
    """Frame ``k`` is active for a speaker when its centre lies inside one of the speaker's turns."""
    return _rasterize_spans(_span_arrays(timeline), speakers, start, n_frames, frame_rate)


def export_ssa_labels(
    fused: Timeline, channels: Mapping[str, Sequence[SegmentBundle]], cfg: PipelineConfig | None = None
) -> SsaLabelSet:
    """Fused speakers rasterized on each channel's segment grid.

    Rows follow the global labels in natural sort order and stay in place for
    segments where a speaker is silent.
    """
    fused = normalize(fused)
    speakers = tuple(sorted(fused.speakers(), key=natural_key))
    spans = _span_arrays(fused)
    out: dict[str, ChannelLabels] = {}
    for name in sorted(channels):
        bundles = sorted(channels[name], key=lambda b: b.segment_index)
        if not bundles:
            continue
        fr = bundles[0].frame_rate
        segs = []
        for b in bundles:
            act = _rasterize_spans(spans, speakers, b.start, b.n_frames, fr)
            act.setflags(write=False)
            segs.append(SsaSegment(b.segment_index, b.start, act))
        span_start, span_end = bundles[0].start, bundles[-1].end
        out[name] = ChannelLabels(
            fused.session_id, name, fr, speakers, fused.restrict(span_start, span_end), tuple(segs)
        )
    return SsaLabelSet(fused.session_id, speakers, out)


def ssa_labels_to_timeline(labels: ChannelLabels) -> Timeline:
    turns = []
    for seg in labels.segments:
        for i, spk in enumerate(labels.speakers):
            for a, b in frame_runs(seg.activities[i]):
                turns.append(SpeakerTurn(spk, seg.start + a / labels.frame_rate, seg.start + b / labels.frame_rate))
    return normalize(Timeline(labels.session_id, tuple(turns)))


def write_ssa_labels(labels: ChannelLabels, path: str | os.PathLike) -> None:
    """Same JSON-lines layout as segment bundles, with a speaker list and no embeddings."""
    header = {
        "type": "header",
        "kind": "ssa_labels",
        "session_id": labels.session_id,
        "channel": labels.channel,
        "speakers": list(labels.speakers),
        "S": len(labels.speakers),
        "T_nominal": max((s.activities.shape[1] for s in labels.segments), default=0),
        "frame_rate": labels.frame_rate,
    }
    lines = [json.dumps(header)]
    for s in labels.segments:
        lines.append(
            json.dumps(
                {
                    "type": "segment",
                    "segment_index": s.segment_index,
                    "start": s.start,
                    "T_actual": int(s.activities.shape[1]),
                    "activities": s.activities.ravel().tolist(),
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ssa_labels(path: str | os.PathLike) -> ChannelLabels:
    header = None
    segs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, path=str(path)) from None
            if rec.get("type") == "header":
                header = rec
                continue
            if header is None:
                raise ParseError("segment record before header", line=lineno, path=str(path))
            n = len(header["speakers"])
            act = np.asarray(rec["activities"], dtype=np.uint8)
            if act.size != n * int(rec["T_actual"]):
                raise SchemaError(f"line {lineno}: activity size does not match {n} speakers")
            segs.append(SsaSegment(int(rec["segment_index"]), float(rec["start"]), act.reshape(n, -1)))
    if header is None or header.get("kind") != "ssa_labels":
        raise ParseError("missing pseudo-label header", path=str(path))
    labels = ChannelLabels(
        header["session_id"], header["channel"], float(header["frame_rate"]), tuple(header["speakers"]),
        Timeline(header["session_id"], ()), tuple(segs),
    )
    return replace(labels, timeline=ssa_labels_to_timeline(labels))


# ---------------------------------------------------------------------------
# output tree


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _diag_for_json(diag: Mapping[str, Any]) -> dict:
    return {k: v for k, v in diag.items() if k != "merges"}


def write_session_outputs(
    result: SessionResult,
    out_dir: str | os.PathLike,
    ssa: SsaLabelSet | None = None,
) -> Path:
    """Per-channel RTTMs, fused RTTM, diagnostics and pseudo-labels under ``out_dir/<session>``.

    Nothing time-dependent is written, so identical inputs give identical trees.
    """
    root = Path(out_dir) / result.session_id
    root.mkdir(parents=True, exist_ok=True)
    for name, tl in sorted(result.per_channel.items()):
        write_rttm(tl, root / f"{name}.rttm")
    write_rttm(result.fused, root / "fused.rttm")
    meta = {
        "session": result.session_id,
        "iteration": result.iteration,
        "channels": {n: _diag_for_json(d) for n, d in sorted(result.diagnostics.items())},
        "failures": dict(sorted(result.failures.items())),
        "fused_speakers": sorted(result.fused.speakers(), key=natural_key),
    }
    (root / "diagnostics.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8"
    )
    if ssa is not None:
        ssa_dir = root / "ssa"
        ssa_dir.mkdir(exist_ok=True)
        for name, labels in sorted(ssa.channels.items()):
            write_ssa_labels(labels, ssa_dir / f"{name}.jsonl")
    return root


def channel_name(path: str | os.PathLike) -> str:
    name = Path(path).name
    for suffix in (".jsonl", ".json", ".bundles"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def run(cfg: PipelineConfig, iteration: int = 1) -> dict[str, Any]:
    """Run every configured session and write the output tree; returns the report written to ``report.json``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report: dict[str, Any] = {"iteration": iteration, "sessions": {}}
    for session in sorted(cfg.channels):
        entry: dict[str, Any] = {}
        try:
            channels = {}
            for p in cfg.channels[session]:
                channels[channel_name(p)] = read_bundles(p)
            result = run_session(channels, cfg, session, iteration)
            ssa = export_ssa_labels(result.fused, channels, cfg) if result.fused.turns else None
            write_session_outputs(result, out, ssa)
            entry = {"status": "ok" if not result.failures else "partial", "failures": dict(sorted(result.failures.items()))}
        except (DiarizationError, OSError) as exc:
            entry = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            log.error(entry["error"], extra={"session": session, "stage": "session"})
        report["sessions"][session] = entry
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def exit_code(report: Mapping[str, Any]) -> int:
    """0 when every session produced fused output, 2 when some did, 1 when none did."""
    fused = [s["status"] != "failed" for s in report["sessions"].values()]
    if all(fused):
        return 0
    return 2 if any(fused) else 1


__all__ = [
    "ChannelLabels",
    "ChannelResult",
    "PipelineConfig",
    "SessionResult",
    "SsaLabelSet",
    "SsaSegment",
    "config_from_mapping",
    "dump_config",
    "exit_code",
    "export_ssa_labels",
    "load_config",
    "parse_overrides",
    "rasterize",
    "read_ssa_labels",
    "run",
    "run_channel",
    "run_second_pass",
    "run_session",
    "ssa_labels_to_timeline",
    "write_session_outputs",
    "write_ssa_labels",
]
