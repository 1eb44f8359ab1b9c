"""Six devices, one of them badly broken, fused into one hypothesis.

Channel 5 gets flipped activity frames and doubled embedding noise. Voting
across channels outvotes it without needing to know which channel is bad.

Run from the repository root:  python demos/03_fusing_channels.py
"""

from diarfuse import PipelineConfig, SimConfig, generate_ground_truth, run_session, score
from diarfuse.simulate import synthesize_session

for seed in range(1, 6):
    sim = SimConfig(seed=seed, n_channels=6, channel_outlier_indices={5})
    truth = generate_ground_truth(sim)
    result = run_session(synthesize_session(truth, sim), PipelineConfig())
    per_channel = {name: score(truth.timeline, tl).der for name, tl in sorted(result.per_channel.items())}
    fused = score(truth.timeline, result.fused).der
    cells = "  ".join(f"{name} {der:5.1f}" for name, der in per_channel.items())
    print(f"seed {seed}: {cells}  | fused {fused:5.1f}")

# Equal weights are the default; a known-bad device can also be downweighted.
down = PipelineConfig(channel_weights={"ch5": 0.2})
print("ch5 weight 0.2 ->", round(score(truth.timeline, run_session(synthesize_session(truth, sim), down).fused).der, 2))
