from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from diarfuse.timeline import SpeakerTurn, Timeline

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def random_timeline(
    rng: np.random.Generator,
    n_speakers: int = 3,
    n_turns: int = 10,
    length: float = 60.0,
    grid: float | None = 0.01,
    session_id: str = "s",
    labels: str = "ABCDEFGH",
) -> Timeline:
    """Random turns, optionally snapped to a time grid (10 ms by default)."""
    turns = []
    for _ in range(n_turns):
        start = rng.uniform(0.0, length - 0.5)
        dur = rng.uniform(0.2, min(8.0, length - start))
        end = start + dur
        if grid:
            start, end = round(start / grid) * grid, round(end / grid) * grid
            start, end = round(start, 6), round(end, 6)
        if end <= start:
            continue
        turns.append(SpeakerTurn(labels[int(rng.integers(n_speakers))], start, end))
    return Timeline(session_id, tuple(turns))


def turn_tuples(tl: Timeline) -> list[tuple[str, float, float]]:
    return [(t.speaker, t.start, t.end) for t in tl.turns]


@st.composite
def timelines(draw, max_turns: int = 12, millisecond: bool = False):
    """Hypothesis strategy for small valid timelines."""
    n = draw(st.integers(0, max_turns))
    turns = []
    for _ in range(n):
        spk = draw(st.sampled_from(["A", "B", "C", "spk0", "spk10"]))
        if millisecond:
            start_ms = draw(st.integers(0, 100_000))
            dur_ms = draw(st.integers(1, 20_000))
            start, end = start_ms / 1000, (start_ms + dur_ms) / 1000
        else:
            start = draw(st.floats(0, 1000, allow_nan=False, allow_infinity=False))
            end = start + draw(st.floats(1e-3, 100, allow_nan=False, allow_infinity=False))
        turns.append(SpeakerTurn(spk, start, end))
    return Timeline(draw(st.sampled_from(["s1", "S26", "sess_b"])), tuple(turns))
