"""Analytic encoder/decoder between 32x32 mel patches and whitened 64-d latents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import MelPatch, MelStats
from .nncore import ParamStore, load_checkpoint, save_checkpoint

BLOCK = 4
GRID = 8
LATENT_DIM = GRID * GRID


@dataclass(frozen=True)
class LatentStats:
    mean: np.ndarray  # (64,)
    std: np.ndarray  # (64,)

    def __post_init__(self):
        if np.any(~(self.std > 0)):
            raise ValueError("latent stats have a coordinate with zero std")


class StatsMissing(RuntimeError):
    pass


def pool(values: np.ndarray) -> np.ndarray:
    """4x4 block means of (..., 32, 32) patches, flattened row-major to (..., 64)."""
    v = np.asarray(values)
    lead = v.shape[:-2]
    blocks = v.reshape(*lead, GRID, BLOCK, GRID, BLOCK).mean(axis=(-3, -1))
    return blocks.reshape(*lead, LATENT_DIM)


def unpool(flat: np.ndarray) -> np.ndarray:
    f = np.asarray(flat)
    grid = f.reshape(*f.shape[:-1], GRID, GRID)
    return np.repeat(np.repeat(grid, BLOCK, axis=-2), BLOCK, axis=-1)


def _patch_values(patch):
    return patch.values if isinstance(patch, MelPatch) else np.asarray(patch)


def encode(patch, stats: LatentStats | None) -> np.ndarray:
    """Pool and whiten a patch (or a stack of patch arrays)."""
    if stats is None:
        raise StatsMissing("latent stats have not been fitted")
    return (pool(_patch_values(patch)) - stats.mean) / stats.std


def decode(latent, stats: LatentStats | None, mel_stats: MelStats | None = None):
    """Unwhiten and upsample back to a block-constant 32x32 patch.

    A single latent gives a MelPatch; a batch (N, 64) gives an (N, 32, 32) array.
    """
    if stats is None:
        raise StatsMissing("latent stats have not been fitted")
    z = np.asarray(latent, dtype=np.float64)
    values = unpool(z * stats.std + stats.mean)
    return MelPatch(values, mel_stats) if z.ndim == 1 else values


def fit_stats(train_patches) -> LatentStats:
    pooled = pool(np.asarray(train_patches, dtype=np.float64))
    if pooled.shape[0] < 2:
        raise ValueError("need at least two training patches")
    std = pooled.std(axis=0)
    if np.any(std == 0):
        bad = np.flatnonzero(std == 0).tolist()
        raise ValueError(f"degenerate latent coordinates (zero std): {bad}")
    return LatentStats(pooled.mean(axis=0), std)


def save_stats(path, latent_stats: LatentStats, mel_stats: MelStats, meta: dict | None = None) -> None:
    # f32 container; stats are rounded to f32 on write, so callers reload after saving
    store = ParamStore({"latent.mean": latent_stats.mean.astype(np.float32),
                        "latent.std": latent_stats.std.astype(np.float32),
                        "mel.mean": np.array([mel_stats.mean], dtype=np.float32),
                        "mel.std": np.array([mel_stats.std], dtype=np.float32)})
    save_checkpoint(path, store, meta=dict(meta or {}, stage="stats"))


def load_stats(path) -> tuple[LatentStats, MelStats]:
    store, _, _ = load_checkpoint(path)
    lat = LatentStats(store["latent.mean"].astype(np.float64), store["latent.std"].astype(np.float64))
    mel = MelStats(float(store["mel.mean"][0]), float(store["mel.std"][0]))
    return lat, mel
