"""Shared setup for the demo scripts: one artifact root, trained once and reused."""
import sys

from timbreswap import pipeline
from timbreswap.config import load_config


def prepared(root="demo_artifacts"):
    root = sys.argv[1] if len(sys.argv) > 1 else root
    config = load_config(None, {"root": root})
    if not (config.corpus_path / "manifest.jsonl").exists():
        print(f"synthesizing corpus under {config.corpus_path} ...")
        pipeline.synth(config)
    if not pipeline.checkpoint_path(config, "diffusion").exists():
        print("training all stages (about a minute) ...")
        pipeline.train(config, "all")
    return config
