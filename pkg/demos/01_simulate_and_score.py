"""Walk one synthetic session through the whole back half of the pipeline.

Run from the repository root:  python demos/01_simulate_and_score.py [out_dir]
"""

import sys
from pathlib import Path

from diarfuse import PipelineConfig, ScoringOptions, SimConfig, generate_ground_truth, run, score
from diarfuse.local_io import read_bundles, write_bundles
from diarfuse.simulate import synthesize_channel
from diarfuse.timeline import read_rttm, total_speech, write_rttm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/walkthrough")
out.mkdir(parents=True, exist_ok=True)

# ---- Step 1: a ten-minute, four-speaker session recorded on three devices ----
sim = SimConfig(seed=42, session_length=600.0, n_channels=3)
truth = generate_ground_truth(sim)
write_rttm(truth.timeline, out / "ref.rttm")
print(f"reference: {len(truth.timeline.turns)} turns, {total_speech(truth.timeline):.1f} s of speech")

# The encoder output for each device is a list of 80 s segment bundles:
# per-stream frame activities (4 x 800) and one embedding per stream.
paths = []
for c in range(sim.n_channels):
    path = out / f"ch{c}.jsonl"
    write_bundles(synthesize_channel(truth, sim, c), path)
    paths.append(str(path))
first = read_bundles(paths[0])[0]
print(f"segment 0 of ch0: activities {first.activities.shape}, embeddings {first.embeddings.shape}")

# ---- Step 2: cluster each channel, stitch, fuse, export speaker labels ----
cfg = PipelineConfig(channels={"walkthrough": tuple(paths)}, output_dir=str(out / "run"))
report = run(cfg)
print("run report:", report["sessions"])

# ---- Step 3: score every channel and the fused output against the reference ----
opts = ScoringOptions(collar=0.25)
for rttm in sorted((out / "run" / "walkthrough").glob("*.rttm")):
    (hyp,) = read_rttm(rttm)
    r = score(truth.timeline, hyp, opts)
    print(f"{rttm.stem:>6}: DER {r.der:5.2f}%  (CF {r.cf:4.2f}  FA {r.fa:4.2f}  MI {r.mi:4.2f})")
