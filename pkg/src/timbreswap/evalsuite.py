"""Edit metrics (chroma distance, instrument accuracy, KAD) and the pairwise evaluation matrix."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import latentspace as ls
from .classifiers import TeacherClassifier, classify_patch, predict_labels, teacher_features
from .dsp import MelPatch, MelStats, Spectrogram, chromagram, patch_to_spectrogram, stft
from .latentspace import LatentStats
from .synthcorpus import AudioClip
from .tone import EditRequest, EditResult, Models, NoChangeError, edit, probe_trajectory


def _spectrogram(x, mel_stats: MelStats | None) -> Spectrogram:
    if isinstance(x, Spectrogram):
        return x
    if isinstance(x, MelPatch):
        return patch_to_spectrogram(x, mel_stats)
    if isinstance(x, AudioClip):
        return stft(x)
    return stft(np.asarray(x))


def chroma_distance(a, b, mel_stats: MelStats | None = None) -> float:
    """Frame-mean of 1 - cos between chroma rows.

    Accepts clips, raw sample arrays, spectrograms or mel patches. A frame that
    is silent in both inputs counts 0, silent in exactly one counts 1.
    """
    sa, sb = _spectrogram(a, mel_stats), _spectrogram(b, mel_stats)
    if sa.magnitudes.shape != sb.magnitudes.shape:
        raise ValueError(f"length mismatch: {sa.magnitudes.shape[0]} vs {sb.magnitudes.shape[0]} frames")
    ca, cb = chromagram(sa).values, chromagram(sb).values
    za = ~np.any(ca > 0, axis=1)
    zb = ~np.any(cb > 0, axis=1)
    # rows are unit norm, so 1 - cos = |a - b|^2 / 2, which is exactly 0 for identical rows
    d = 0.5 * np.sum((ca - cb) ** 2, axis=1)
    d = np.where(za & zb, 0.0, np.where(za ^ zb, 1.0, d))
    return float(np.clip(d, 0.0, 1.0).mean())


def median_bandwidth(x, y) -> float:
    pooled = np.concatenate([np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)])
    return float(np.median(pdist(pooled)))


def mmd2_unbiased(x, y, bandwidth: float) -> float:
    """Unbiased quadratic-time MMD^2 with k(a, b) = exp(-|a - b|^2 / (2 bw^2))."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = len(x), len(y)
    gamma = 1.0 / (2.0 * bandwidth ** 2)
    kxx = np.exp(-gamma * cdist(x, x, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(y, y, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(x, y, "sqeuclidean"))
    # exactly-rounded sums keep the estimator bit-symmetric in (x, y)
    sxx = (math.fsum(kxx.ravel()) - math.fsum(np.diag(kxx))) / (m * (m - 1))
    syy = (math.fsum(kyy.ravel()) - math.fsum(np.diag(kyy))) / (n * (n - 1))
    return float(sxx + syy - 2.0 * math.fsum(kxy.ravel()) / (m * n))


def kad(x, y, bandwidth: float | None = None, scale: float = 100.0) -> float:
    """Kernel audio distance: scaled unbiased MMD^2 between two embedding sets.

    The bandwidth defaults to the median pairwise distance of the pooled set.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("KAD needs at least two embeddings per set")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("embeddings must be finite")
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
        if bandwidth == 0:
            raise ValueError("median pairwise distance is zero; sets are degenerate")
    return scale * mmd2_unbiased(x, y, bandwidth)


# -- embeddings, accuracy ---------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingSet:
    values: np.ndarray  # (n, 128)
    tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or len(v) < 2:
            raise ValueError("an embedding set needs shape (n >= 2, d)")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"embedding set {self.tag!r} has non-finite rows")


def _latents(edits) -> np.ndarray:
    return np.stack([e.edited if isinstance(e, EditResult) else np.asarray(e) for e in edits])


def decoded_patches(latents, latent_stats: LatentStats) -> np.ndarray:
    return ls.decode(np.atleast_2d(np.asarray(latents, dtype=np.float64)), latent_stats)


def instrument_accuracy(edits, teacher: TeacherClassifier, targets, latent_stats: LatentStats) -> float:
    """Fraction of edits whose decoded patch the teacher assigns to the target instrument."""
    if len(edits) == 0:
        raise ValueError("instrument accuracy needs at least one edit")
    logits = teacher.logits(decoded_patches(_latents(edits), latent_stats))
    return float(np.mean(predict_labels(logits) == np.asarray(targets)))


# -- evaluation matrix ------------------------------------------------------------

@dataclass(frozen=True)
class MatrixConfig:
    seeds_per_pair: int = 5
    seed_base: int = 10_000
    strategies: tuple = ("diff_tone", "midpoint", "random")
    w: float = 3.0
    window: int = 5
    fallback: str = "midpoint"
    min_confidence: float = 0.0
    random_seed: int = 0
    kad_scale: float = 100.0

    @property
    def seeds(self) -> list[int]:
        return [self.seed_base + i for i in range(self.seeds_per_pair)]


@dataclass
class EvalModels:
    tone: Models
    teacher: TeacherClassifier
    latent_stats: LatentStats
    mel_stats: MelStats
    reference: dict  # class id -> (n, 128) teacher features of that class's training patches


@dataclass
class MetricsReport:
    rows: list  # one dict per strategy: strategy, chroma, kad, inst_acc, n, no_change, errors
    pairs: list  # per (strategy, src, tgt) breakdown
    edits: list  # one dict per edit row
    config_hash: str = ""
    seeds: list = field(default_factory=list)

    def row(self, strategy: str) -> dict:
        return next(r for r in self.rows if r["strategy"] == strategy)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash}\n")
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["strategy", "chroma", "kad", "inst_acc", "n", "no_change", "errors"])
        for r in self.rows:
            out.writerow([r["strategy"], f"{r['chroma']:.6f}", f"{r['kad']:.6f}", f"{r['inst_acc']:.6f}",
                          r["n"], r["no_change"], r["errors"]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"config_hash": self.config_hash, "seeds": self.seeds, "strategies": self.rows,
                           "pairs": self.pairs, "edits": self.edits}, indent=1, sort_keys=True)

    def write(self, out_dir, stem: str = "metrics") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json() + "\n")
        return csv_path, json_path


def _source_rows(models: EvalModels, config: MatrixConfig, src: int, seed: int, n_classes: int) -> list[dict]:
    """All edits for one (source, seed): one shared probe pass, then every target and strategy."""
    tm = models.tone
    source_run = probe_trajectory(tm.net, tm.schedule, tm.probe, seed, src, config.w)
    src_patch = ls.decode(source_run[0].x0, models.latent_stats, models.mel_stats)
    rows = []
    for tgt in range(n_classes):
        if tgt == src:
            continue
        for strategy in config.strategies:
            row = {"src": src, "tgt": tgt, "seed": seed, "strategy": strategy}
            req = EditRequest(seed, src, tgt, config.w, strategy, config.fallback, config.window,
                              config.min_confidence, config.random_seed)
            try:
                res = edit(req, tm, source_run)
            except NoChangeError:
                row.update(status="no_change_error", t_star=None)
                rows.append(row)
                continue
            patch = ls.decode(res.edited, models.latent_stats, models.mel_stats)
            pred = classify_patch(models.teacher, patch)
            row.update(status=res.decision.status, t_star=res.decision.t_star,
                       chroma=chroma_distance(patch, src_patch, models.mel_stats),
                       pred=pred.label, correct=int(pred.label == tgt),
                       feature=teacher_features(models.teacher, patch)[0])
            rows.append(row)
    return rows


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def run_matrix(models: EvalModels, config: MatrixConfig = MatrixConfig(), workers: int = 1,
               config_hash: str = "") -> MetricsReport:
    """Every ordered instrument pair x seed x strategy, with the probe pass shared per (source, seed)."""
    n_classes = models.teacher.n_classes
    jobs = [(src, seed) for src in range(n_classes) for seed in config.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_source_rows, *zip(*[(models, config, s, sd, n_classes) for s, sd in jobs])))
    else:
        chunks = [_source_rows(models, config, s, sd, n_classes) for s, sd in jobs]
    order = {s: i for i, s in enumerate(config.strategies)}
    edits = sorted((r for c in chunks for r in c), key=lambda r: (order[r["strategy"]], r["src"], r["tgt"], r["seed"]))

    summary, pairs = [], []
    for strategy in config.strategies:
        mine = [r for r in edits if r["strategy"] == strategy]
        done = [r for r in mine if "chroma" in r]
        kads = []
        for tgt in range(n_classes):
            feats = [r["feature"] for r in done if r["tgt"] == tgt]
            if len(feats) >= 2:
                kads.append(kad(np.stack(feats), models.reference[tgt], scale=config.kad_scale))
        summary.append({"strategy": strategy, "chroma": _mean(r["chroma"] for r in done), "kad": _mean(kads),
                        "inst_acc": _mean(r["correct"] for r in done), "n": len(mine),
                        "no_change": sum(r["status"] != "selected" for r in mine),
                        "errors": sum(r["status"] == "no_change_error" for r in mine)})
        for src in range(n_classes):
            for tgt in range(n_classes):
                cell = [r for r in done if r["src"] == src and r["tgt"] == tgt]
                if cell:
                    pairs.append({"strategy": strategy, "src": src, "tgt": tgt,
                                  "chroma": _mean(r["chroma"] for r in cell),
                                  "inst_acc": _mean(r["correct"] for r in cell),
                                  "t_star": [r["t_star"] for r in cell]})
    for r in edits:
        r.pop("feature", None)
    return MetricsReport(summary, pairs, edits, config_hash, config.seeds)
