"""Seeded synthetic sessions and encoder outputs for desk-scale trend experiments.

Ground truth: each speaker alternates exponential utterances and pauses,
independently of the others, quantized to the frame grid. Encoder output:
the truth cut into fixed-length segments, speakers shuffled over the local
streams, boundaries jittered, embeddings drawn around per-speaker centroids
with noise shrinking as ``1 / sqrt(active seconds)``. Optional error injection
covers mid-segment stream swaps and corrupted (outlier) channels.

Every random draw comes from a generator keyed on ``(seed, purpose, ...)``;
there is no module-level randomness.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .local_io import EmbeddingSource, SegmentBundle, frame_runs
from .timeline import SpeakerTurn, Timeline

_TRUTH, _CHANNEL = 0, 1
MAX_OVERLAP_ATTEMPTS = 200
MAX_CENTROID_ATTEMPTS = 1000


@dataclass(frozen=True, kw_only=True)
class SimConfig:
    seed: int
    n_speakers: int = 4
    session_length: float = 600.0
    mean_pause: float = 2.0
    mean_utterance: float = 3.0
    overlap_fraction: float | None = None
    embedding_dim: int = 32
    embedding_noise_base: float = 1.0
    permutation_error_rate: float = 0.05
    n_channels: int = 1
    channel_outlier_indices: frozenset[int] = frozenset()
    segment_size: float = 80.0
    frame_rate: float = 10.0
    n_streams: int = 4
    boundary_jitter_frames: int = 2
    outlier_flip_prob: float = 0.3
    outlier_noise_scale: float = 2.0
    overlap_noise_gain: float = 0.0
    min_separation: float = 0.8
    session_id: str = "sim"

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_outlier_indices", frozenset(int(c) for c in self.channel_outlier_indices))
        if not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed must be an integer")
        for name in ("session_length", "mean_pause", "mean_utterance", "segment_size", "frame_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("permutation_error_rate", "outlier_flip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.overlap_fraction is not None and not 0.0 <= self.overlap_fraction <= 1.0:
            raise ConfigError("overlap_fraction must be in [0, 1]")
        if not 1 <= self.n_speakers <= self.n_streams:
            raise ConfigError(f"n_speakers must be in [1, n_streams={self.n_streams}]")
        if self.embedding_dim < 2 or self.n_channels < 1:
            raise ConfigError("embedding_dim must be >= 2 and n_channels >= 1")
        if self.embedding_noise_base < 0 or self.outlier_noise_scale < 0 or self.overlap_noise_gain < 0:
            raise ConfigError("noise parameters must be non-negative")
        if self.boundary_jitter_frames < 0:
            raise ConfigError("boundary_jitter_frames must be >= 0")
        if any(not 0 <= c < self.n_channels for c in self.channel_outlier_indices):
            raise ConfigError("outlier channel index out of range")
        if not 0.0 <= self.min_separation <= 2.0:
            raise ConfigError("min_separation must be a cosine distance in [0, 2]")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    timeline: Timeline
    speaker_centroids: np.ndarray
    frame_activity: np.ndarray  # n_speakers x n_frames, bool
    frame_rate: float

    @property
    def speakers(self) -> list[str]:
        return [speaker_name(i) for i in range(self.speaker_centroids.shape[0])]


@dataclass(frozen=True)
class ChannelInfo:
    channel: int
    outlier: bool
    swapped_segments: tuple[int, ...]
    stream_speakers: tuple[tuple[int, ...], ...]  # per segment, speaker index per stream (-1 = none)


def speaker_name(i: int) -> str:
    return f"ref{i}"


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# ---------------------------------------------------------------------------
# ground truth


def _speaker_track(rng: np.random.Generator, n_frames: int, cfg: SimConfig) -> np.ndarray:
    fr = cfg.frame_rate
    track = np.zeros(n_frames, dtype=bool)
    t = int(round(rng.uniform(0.0, cfg.mean_pause) * fr))  # jittered start offset
    while t < n_frames:
        utt = max(1, int(round(rng.exponential(cfg.mean_utterance) * fr)))
        track[t : t + utt] = True
        t += utt
        t += max(1, int(round(rng.exponential(cfg.mean_pause) * fr)))
    return track


def overlap_ratio(frame_activity: np.ndarray) -> float:
    """Fraction of speech frames with two or more active speakers."""
    counts = frame_activity.sum(axis=0)
    speech = np.count_nonzero(counts)
    return float(np.count_nonzero(counts >= 2) / speech) if speech else 0.0


def expected_overlap_ratio(cfg: SimConfig) -> float:
    """Stationary overlap ratio of independent alternating renewal speakers."""
    p = cfg.mean_utterance / (cfg.mean_utterance + cfg.mean_pause)
    return 1.0 - (1.0 - p) ** (cfg.n_speakers - 1)


def _sample_centroids(rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
    for _ in range(MAX_CENTROID_ATTEMPTS):
        C = rng.standard_normal((cfg.n_speakers, cfg.embedding_dim))
        C /= np.linalg.norm(C, axis=1, keepdims=True)
        d = 1.0 - C @ C.T
        iu = np.triu_indices(cfg.n_speakers, 1)
        if d[iu].size == 0 or d[iu].min() >= cfg.min_separation:
            return C
    raise ConfigError(f"could not draw {cfg.n_speakers} centroids {cfg.min_separation} apart in {cfg.embedding_dim} dims")


def activity_to_timeline(activity: np.ndarray, frame_rate: float, session_id: str, names: Sequence[str]) -> Timeline:
    turns = []
    for i, row in enumerate(activity):
        for a, b in frame_runs(row):
            turns.append(SpeakerTurn(names[i], a / frame_rate, b / frame_rate))
    turns.sort(key=lambda t: (t.start, t.end, t.speaker))
    return Timeline(session_id, tuple(turns))


def generate_ground_truth(cfg: SimConfig) -> GroundTruth:
    """Reference timeline and speaker centroids for ``cfg.seed``.

    With ``overlap_fraction`` set, whole sessions are redrawn until the realized
    overlap ratio is within 0.1 of the target; a target far from what
    independent speakers can produce raises :class:`ConfigError`.
    """
    n_frames = int(round(cfg.session_length * cfg.frame_rate))
    target = cfg.overlap_fraction
    if target is not None:
        natural = expected_overlap_ratio(cfg)
        if cfg.n_speakers == 1 and target > 0.1:
            raise ConfigError("a single speaker cannot overlap")
        if abs(target - natural) > 0.25:
            raise ConfigError(
                f"overlap target {target:.2f} is infeasible for {cfg.n_speakers} independent speakers "
                f"(expected ratio {natural:.2f} with these utterance/pause means)"
            )
    attempts = 1 if target is None else MAX_OVERLAP_ATTEMPTS
    for attempt in range(attempts):
        rng = _rng(cfg.seed, _TRUTH, attempt)
        activity = np.stack([_speaker_track(rng, n_frames, cfg) for _ in range(cfg.n_speakers)])
        if target is None or abs(overlap_ratio(activity) - target) <= 0.1:
            break
    else:
        raise ConfigError(f"no session within 0.1 of overlap target {target} after {attempts} draws")
    centroids = _sample_centroids(_rng(cfg.seed, _TRUTH, 10_000), cfg)
    names = [speaker_name(i) for i in range(cfg.n_speakers)]
    timeline = activity_to_timeline(activity, cfg.frame_rate, cfg.session_id, names)
    activity.setflags(write=False)
    centroids.setflags(write=False)
    return GroundTruth(timeline, centroids, activity, cfg.frame_rate)


# ---------------------------------------------------------------------------
# channel synthesis


def _jitter(row: np.ndarray, J: int, rng: np.random.Generator) -> np.ndarray:
    if J == 0:
        return row.copy()
    T = row.size
    out = np.zeros(T, dtype=bool)
    for a, b in frame_runs(row):
        s = int(np.clip(a + rng.integers(-J, J + 1), 0, T))
        e = int(np.clip(b + rng.integers(-J, J + 1), 0, T))
        if e <= s:
            s, e = a, b
        out[s:e] = True
    return out


def sample_embedding(
    direction: np.ndarray, active_seconds: float, sigma0: float, rng: np.random.Generator
) -> np.ndarray:
    """Unit vector near ``direction`` with isotropic noise of scale ``sigma0 / sqrt(active_seconds)``."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    v = d + (sigma0 / math.sqrt(active_seconds)) * rng.standard_normal(d.size)
    return v / np.linalg.norm(v)


def segment_grid(n_frames: int, segment_frames: int) -> list[tuple[int, int]]:
    return [(f0, min(f0 + segment_frames, n_frames)) for f0 in range(0, n_frames, segment_frames)]


def synthesize_channel_with_info(
    truth: GroundTruth, cfg: SimConfig, channel: int, stream: int = 0
) -> tuple[list[SegmentBundle], ChannelInfo]:
    if not 0 <= channel < cfg.n_channels:
        raise ConfigError(f"channel {channel} outside [0, {cfg.n_channels})")
    rng = _rng(cfg.seed, _CHANNEL, stream, channel)
    fr = cfg.frame_rate
    S, D = cfg.n_streams, truth.speaker_centroids.shape[1]
    outlier = channel in cfg.channel_outlier_indices
    seg_frames = max(1, int(round(cfg.segment_size * fr)))
    noise_scale = cfg.outlier_noise_scale if outlier else 1.0
    overlapped = truth.frame_activity.sum(axis=0) >= 2

    bundles, swapped, layout = [], [], []
    for idx, (f0, f1) in enumerate(segment_grid(truth.frame_activity.shape[1], seg_frames)):
        T = f1 - f0
        seg = truth.frame_activity[:, f0:f1]
        active = [i for i in range(seg.shape[0]) if seg[i].any()]
        slots = rng.permutation(S)[: len(active)]
        owner = np.full((S, T), -1, dtype=np.int64)
        hard = np.zeros((S, T), dtype=bool)
        for spk, slot in zip(active, slots):
            row = _jitter(seg[spk], cfg.boundary_jitter_frames, rng)
            hard[slot] = row
            owner[slot, row] = spk
        if len(active) >= 2 and rng.random() < cfg.permutation_error_rate:
            a, b = rng.choice(slots, size=2, replace=False)
            h = T // 2
            hard[[a, b], h:] = hard[[b, a], h:]
            owner[[a, b], h:] = owner[[b, a], h:]
            swapped.append(idx)
        if outlier and cfg.outlier_flip_prob > 0:
            hard ^= rng.random((S, T)) < cfg.outlier_flip_prob
        act = np.where(hard, rng.uniform(0.6, 1.0, (S, T)), rng.uniform(0.0, 0.4, (S, T)))

        emb = np.empty((S, D))
        for j in range(S):
            mask = owner[j] >= 0
            n_true = int(np.count_nonzero(mask))
            if n_true == 0:
                v = rng.standard_normal(D)
                emb[j] = v / np.linalg.norm(v)
                continue
            counts = np.bincount(owner[j][mask], minlength=truth.speaker_centroids.shape[0])
            direction = counts @ truth.speaker_centroids
            scale = noise_scale
            if cfg.overlap_noise_gain > 0:
                frac = float(np.count_nonzero(overlapped[f0:f1][mask])) / n_true
                scale *= 1.0 + cfg.overlap_noise_gain * frac
            emb[j] = sample_embedding(direction, n_true / fr, scale * cfg.embedding_noise_base, rng)
        layout.append(tuple(int(np.bincount(owner[j][owner[j] >= 0]).argmax()) if (owner[j] >= 0).any() else -1 for j in range(S)))
        bundles.append(
            SegmentBundle(
                segment_index=idx,
                start=f0 / fr,
                frame_rate=fr,
                activities=act,
                embeddings=emb,
                embedding_source=EmbeddingSource.EEND_VC,
                session_id=cfg.session_id,
            )
        )
    return bundles, ChannelInfo(channel, outlier, tuple(swapped), tuple(layout))


def synthesize_channel(truth: GroundTruth, cfg: SimConfig, channel: int, stream: int = 0) -> list[SegmentBundle]:
    """Encoder-style segment bundles for one channel of the simulated session."""
    return synthesize_channel_with_info(truth, cfg, channel, stream)[0]


def synthesize_session(truth: GroundTruth, cfg: SimConfig, stream: int = 0) -> dict[str, list[SegmentBundle]]:
    return {f"ch{c}": synthesize_channel(truth, cfg, c, stream) for c in range(cfg.n_channels)}


# ---------------------------------------------------------------------------
# trend experiments

EXPERIMENTS = ("segment_length", "constraint_ablation", "channel_fusion")

DEFAULT_GRIDS: dict[str, list[dict[str, Any]]] = {
    "segment_length": [{"segment_size": 15.0}, {"segment_size": 40.0}, {"segment_size": 80.0}],
    "constraint_ablation": [
        {"algorithm": "ahc"},
        {"algorithm": "cahc"},
        {"algorithm": "kmeans"},
        {"algorithm": "cop_kmeans"},
    ],
    "channel_fusion": [{"n_channels": 6, "channel_outlier_indices": (5,)}],
}

DEFAULT_BASE: dict[str, dict[str, Any]] = {
    "segment_length": {},
    "constraint_ablation": {"permutation_error_rate": 0.2},
    "channel_fusion": {},
}

_PIPELINE_KEYS = ("algorithm", "max_speakers", "collar")


@dataclass(frozen=True)
class TrendResult:
    experiment: str
    records: tuple[Mapping[str, Any], ...]
    summary: tuple[Mapping[str, Any], ...]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "run", **r}, sort_keys=True) for r in self.records]
        lines += [json.dumps({"kind": "summary", **s}, sort_keys=True) for s in self.summary]
        return "\n".join(lines) + "\n"

    def mean_der(self) -> list[float]:
        return [s["mean_der"] for s in self.summary]


def _split_point(point: Mapping[str, Any]) -> tuple[dict[str, Any], dict[str, Any]]:
    sim = {k: v for k, v in point.items() if k not in _PIPELINE_KEYS}
    pipe = {k: v for k, v in point.items() if k in _PIPELINE_KEYS}
    return sim, pipe


def _json_point(point: Mapping[str, Any]) -> dict[str, Any]:
    return {k: (sorted(v) if isinstance(v, (set, frozenset, tuple)) else v) for k, v in point.items()}


def run_trend_experiment(
    name: str,
    cfg_grid: Sequence[Mapping[str, Any]] | None = None,
    seeds: Iterable[int] = range(1, 11),
    base: Mapping[str, Any] | None = None,
) -> TrendResult:
    """Run the full pipeline on simulated sessions for every grid point and seed.

    Grid points are dicts of :class:`SimConfig` overrides plus the pipeline keys
    ``algorithm``, ``max_speakers`` and ``collar``. DER is scored against the
    simulated truth with the pipeline's scoring options.
    """
    from .clustering import ClusteringParams
    from .pipeline import PipelineConfig, run_channel, run_session
    from .scoring import ScoringOptions, score

    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    grid = list(cfg_grid) if cfg_grid is not None else DEFAULT_GRIDS[name]
    base_overrides = {**DEFAULT_BASE[name], **(base or {})}
    seeds = list(seeds)
    records: list[dict[str, Any]] = []
    for gi, point in enumerate(grid):
        sim_over, pipe_over = _split_point({**base_overrides, **point})
        pcfg = PipelineConfig(
            max_speakers=int(pipe_over.get("max_speakers", 4)),
            clustering=ClusteringParams(algorithm=pipe_over.get("algorithm", "cop_kmeans")),
            scoring=ScoringOptions(collar=float(pipe_over.get("collar", 0.25))),
        )
        for seed in seeds:
            cfg = SimConfig(seed=seed, **sim_over)
            truth = generate_ground_truth(cfg)
            rec: dict[str, Any] = {"experiment": name, "grid_index": gi, "grid_point": _json_point(point), "seed": seed}
            if name == "channel_fusion":
                channels = synthesize_session(truth, cfg, stream=gi)
                result = run_session(channels, pcfg, cfg.session_id)
                ch_der = {n: score(truth.timeline, tl, pcfg.scoring).der for n, tl in sorted(result.per_channel.items())}
                fused = score(truth.timeline, result.fused, pcfg.scoring).der
                rec.update(
                    der=fused,
                    channel_der=ch_der,
                    worst_channel_der=max(ch_der.values()),
                    best_channel_der=min(ch_der.values()),
                    violations=sum(int(d.get("violations", 0)) for d in result.diagnostics.values()),
                    violating_segments=sum(int(d.get("violating_segments", 0)) for d in result.diagnostics.values()),
                )
            else:
                bundles = synthesize_channel(truth, cfg, 0, stream=gi)
                res = run_channel(bundles, pcfg, "ch0", cfg.session_id)
                rep = score(truth.timeline, res.timeline, pcfg.scoring)
                rec.update(
                    der=rep.der,
                    cf=rep.cf,
                    fa=rep.fa,
                    mi=rep.mi,
                    k=int(res.diagnostics.get("k", 0)),
                    violations=int(res.diagnostics.get("violations", 0)),
                    violating_segments=int(res.diagnostics.get("violating_segments", 0)),
                )
            records.append(rec)
    summary = []
    for gi, point in enumerate(grid):
        rs = [r for r in records if r["grid_index"] == gi]
        entry = {
            "experiment": name,
            "grid_index": gi,
            "grid_point": _json_point(point),
            "n_runs": len(rs),
            "mean_der": float(np.mean([r["der"] for r in rs])),
            "mean_violating_segments": float(np.mean([r["violating_segments"] for r in rs])),
        }
        if name == "channel_fusion":
            entry["mean_worst_channel_der"] = float(np.mean([r["worst_channel_der"] for r in rs]))
            entry["mean_best_channel_der"] = float(np.mean([r["best_channel_der"] for r in rs]))
        summary.append(entry)
    return TrendResult(name, tuple(records), tuple(summary))


def plot_trend(result: TrendResult, path: str) -> None:
    """Mean DER per grid point as a static image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [", ".join(f"{k}={v}" for k, v in s["grid_point"].items()) for s in result.summary]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(labels)), result.mean_der(), marker="o")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mean DER (%)")
    ax.set_title(result.experiment)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def config_dict(cfg: SimConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["channel_outlier_indices"] = sorted(cfg.channel_outlier_indices)
    return d


__all__ = [
    "ChannelInfo",
    "DEFAULT_GRIDS",
    "EXPERIMENTS",
    "GroundTruth",
    "SimConfig",
    "TrendResult",
    "activity_to_timeline",
    "config_dict",
    "expected_overlap_ratio",
    "generate_ground_truth",
    "overlap_ratio",
    "plot_trend",
    "run_trend_experiment",
    "sample_embedding",
    "segment_grid",
    "speaker_name",
    "synthesize_channel",
    "synthesize_channel_with_info",
    "synthesize_session",
]
