"""Where in the sampling chain should the condition be swapped?

Runs the same seed through the sampler with the condition switched from the
source to the target instrument at a range of steps, then prints how far each
edit moved from the source (chroma distance, latent distance) and what the
teacher now hears. Early swaps are close to a fresh target sample, late swaps
barely change anything.

usage: python demos/01_swap_sweep.py [artifact_root]
"""
from _common import prepared

from timbreswap import pipeline
from timbreswap.synthcorpus import INSTRUMENTS

config = prepared()
summary = pipeline.run_demo(config)
src, tgt = summary["src"], summary["tgt"]
print(f"\n{INSTRUMENTS[src].name} -> {INSTRUMENTS[tgt].name}, guidance w={config.w}")
for run in summary["runs"]:
    print(f"\nseed {run['seed']}")
    print("  t*   chroma-to-src   latent L2 / |x0|   teacher")
    for s in run["swaps"]:
        print(f"  {s['t_star']:2d}   {s['chroma_to_source']:13.4f}   {s['latent_l2'] / s['source_norm']:16.4f}"
              f"   {INSTRUMENTS[s['teacher_pred']].name}")
print(f"\nwaveforms, spectrograms and demo_grid.png are in {config.reports_path / 'demo'}")
