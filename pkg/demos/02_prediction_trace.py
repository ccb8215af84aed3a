"""What the latent classifier sees along one source trajectory, and what each strategy picks.

The last-change rule swaps right after the classifier's final change of mind.
When the prediction never changes the request falls back to the midpoint.
The second half shows why that happens so often on this corpus: instrument
identity is the dominant direction of latent variance, so the x0 estimate is
already classifiable at the first step.

usage: python demos/02_prediction_trace.py [artifact_root]
"""
import numpy as np
from _common import prepared

from timbreswap import pipeline, tone
from timbreswap.synthcorpus import INSTRUMENTS

config = prepared()
bundle = pipeline.load_bundle(config)
models = bundle.tone

for seed, src, tgt in [(7, 1, 2), (10003, 0, 4), (10001, 5, 3)]:
    run = tone.probe_trajectory(models.net, models.schedule, models.probe, seed, src, config.w)
    labels = "".join(str(p.label) for p in run[1])
    print(f"\nseed {seed}, source {INSTRUMENTS[src].name}: labels t=49..0")
    print(f"  {labels}")
    for strategy in ("diff_tone", "diff_tone_online", "midpoint", "random"):
        d = tone.decide(tone.EditRequest(seed, src, tgt, config.w, strategy), run[1])
        print(f"  {strategy:17s} t*={d.t_star:2d}  ({d.status})")

# how much of the latent variance is explained by the instrument label
feats = pipeline.load_features(config)
_, latents = pipeline.patches_and_latents(feats, bundle.latent_stats, bundle.mel_stats)
train = feats.mask("train")
z, y = latents[train], feats.labels[train]
means = np.stack([z[y == c].mean(0) for c in np.unique(y)])
between = float(((means[y] - z.mean(0)) ** 2).sum())
total = float(((z - z.mean(0)) ** 2).sum())
print(f"\nbetween-instrument share of latent variance: {between / total:.2f}")
