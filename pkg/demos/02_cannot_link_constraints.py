"""Why the same-segment cannot-link constraint matters.

Streams inside one segment always belong to different speakers, but when the
encoder swaps two speakers halfway through a segment, both stream embeddings
drift toward a blend and unconstrained clustering happily merges them. The
constrained variants refuse, which keeps the speaker count honest.

Run from the repository root:  python demos/02_cannot_link_constraints.py
"""

from diarfuse import run_trend_experiment

grid = [{"algorithm": a} for a in ("ahc", "cahc", "kmeans", "cop_kmeans")]
result = run_trend_experiment("constraint_ablation", grid, seeds=range(1, 11), base={"permutation_error_rate": 0.2})

print(f"{'algorithm':<12}{'mean DER':>10}{'segments with violations':>28}")
for s in result.summary:
    print(f"{s['grid_point']['algorithm']:<12}{s['mean_der']:>10.2f}{s['mean_violating_segments']:>28.2f}")
