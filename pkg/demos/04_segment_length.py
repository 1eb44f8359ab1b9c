"""Longer encoder segments give the embeddings more speech to average over.

Short segments mean noisier per-stream embeddings and many more items to
cluster, so 15 s segments score clearly worse than 80 s ones. Between 40 s
and 80 s the difference is within seed-to-seed noise on this simulator.
Pass an image path to plot.

Run from the repository root:  python demos/04_segment_length.py [plot.png]
"""

import sys

from diarfuse import run_trend_experiment
from diarfuse.simulate import plot_trend

result = run_trend_experiment("segment_length", seeds=range(1, 11))
for s in result.summary:
    print(f"segment {s['grid_point']['segment_size']:>5.0f} s: mean DER {s['mean_der']:.2f}%")

if len(sys.argv) > 1:
    plot_trend(result, sys.argv[1])
    print("wrote", sys.argv[1])
