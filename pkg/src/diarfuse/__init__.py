"""Non-neural back half of a segment-wise diarization pipeline.

Per-segment speaker activities and embeddings go in; constrained clustering
links speakers across segments, DOVER-LAP fuses channels, and the result is
scored (DER) or exported as frame-level pseudo-labels for encoder adaptation.
"""

from __future__ import annotations

from .clustering import ClusterAssignment, ClusteringParams, ConstraintSet, cluster_session, constrained_ahc, cop_kmeans
from .errors import (
    AllChannelsFailed,
    ConfigError,
    DiarizationError,
    EmptyReference,
    Infeasible,
    InvalidTurn,
    MissingLabel,
    ParseError,
    SchemaError,
)
from .fusion import HypothesisSet, align_labels, dover_lap_vote, fuse, hungarian
from .local_io import EmbeddingSource, LocalStream, SegmentBundle, binarize, read_bundles, write_bundles
from .pipeline import PipelineConfig, SessionResult, export_ssa_labels, load_config, run, run_channel, run_second_pass, run_session
from .scoring import DerReport, ScoringOptions, macro_der, score, score_sessions
from .simulate import SimConfig, generate_ground_truth, run_trend_experiment, synthesize_channel
from .timeline import SpeakerTurn, Timeline, Uem, normalize, read_rttm, write_rttm

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
