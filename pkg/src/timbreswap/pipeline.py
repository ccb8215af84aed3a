"""Artifact layout and the stage functions behind the command-line tool.

Layout under the configured root::

    corpus/   clips/*.wav, manifest.jsonl, corpus.json
    models/   stats, diffusion, teacher, student, head, nondistilled (.dtne)
    reports/  metrics.csv/json, generation.json, edits/, demo/
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifiers as clf
from . import diffusion as dif
from . import dsp
from . import latentspace as ls
from . import nncore
from . import synthcorpus as sc
from .config import RunConfig
from .evalsuite import EvalModels, MatrixConfig, MetricsReport, chroma_distance, run_matrix
from .tone import EditRequest, EditResult, Models, edit, probe_trajectory

log = logging.getLogger(__name__)

STAGES = ("diffusion", "teacher", "distill", "head", "nondistilled", "all")
CHECKPOINTS = {"stats": "stats.dtne", "diffusion": "diffusion.dtne", "teacher": "teacher.dtne",
               "student": "student.dtne", "head": "head.dtne", "nondistilled": "nondistilled.dtne"}
# offsets that give every training stage its own seed
SEED_OFFSETS = {"teacher": 1, "student": 2, "head": 3, "nondistilled": 4, "diffusion": 5}


class MissingArtifact(FileNotFoundError):
    pass


def _require(path: Path, what: str, hint: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifact(f"missing {what} at {path}; run `{hint}` first")
    return Path(path)


def checkpoint_path(config: RunConfig, name: str) -> Path:
    return config.models_path / CHECKPOINTS[name]


# -- corpus and features ---------------------------------------------------------

def synth(config: RunConfig) -> sc.CorpusManifest:
    cc = sc.CorpusConfig(config.clips_per_instrument, 1.0 - config.val_fraction, config.val_fraction, 0.0)
    manifest = sc.generate_corpus(cc, config.corpus_seed, config.corpus_path)
    meta_path = config.corpus_path / "corpus.json"
    meta = json.loads(meta_path.read_text())
    meta["config_hash"] = config.hash
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return manifest


@dataclass
class Features:
    raw: np.ndarray  # (N, 32, 32) un-normalized log-mel
    labels: np.ndarray
    splits: np.ndarray

    def mask(self, split: str) -> np.ndarray:
        return self.splits == split


def load_features(config: RunConfig) -> Features:
    _require(config.corpus_path / "manifest.jsonl", "corpus", "synth")
    manifest = sc.CorpusManifest.load(config.corpus_path)
    raw = np.stack([dsp.log_mel_raw(dsp.stft(manifest.load_audio(e))) for e in manifest.entries])
    return Features(raw, np.array([e.label for e in manifest.entries]), np.array([e.split for e in manifest.entries]))


def fit_and_save_stats(config: RunConfig, feats: Features) -> tuple[ls.LatentStats, dsp.MelStats]:
    train = feats.mask("train")
    mel = dsp.fit_mel_stats(feats.raw[train])
    lat = ls.fit_stats((feats.raw[train] - mel.mean) / mel.std)
    config.models_path.mkdir(parents=True, exist_ok=True)
    ls.save_stats(checkpoint_path(config, "stats"), lat, mel, {"config_hash": config.hash})
    # reload so in-memory stats match the float32 file exactly
    return ls.load_stats(checkpoint_path(config, "stats"))


def load_stats(config: RunConfig) -> tuple[ls.LatentStats, dsp.MelStats]:
    return ls.load_stats(_require(checkpoint_path(config, "stats"), "normalization stats", "train"))


def patches_and_latents(feats: Features, lat: ls.LatentStats, mel: dsp.MelStats):
    patches = (feats.raw - mel.mean) / mel.std
    return patches, ls.encode(patches, lat)


# -- checkpoint helpers -------------------------------------------------------------

def _prefixed(**stores) -> nncore.ParamStore:
    out = nncore.ParamStore()
    for prefix, store in stores.items():
        for name, arr in store.arrays.items():
            out.add(f"{prefix}.{name}", arr)
    return out


def _unprefix(store: nncore.ParamStore, prefix: str) -> nncore.ParamStore:
    out = nncore.ParamStore()
    for name, arr in store.arrays.items():
        if name.startswith(prefix + "."):
            out.add(name[len(prefix) + 1:], arr)
    return out


def _save(config: RunConfig, name: str, params: nncore.ParamStore, meta: dict) -> None:
    config.models_path.mkdir(parents=True, exist_ok=True)
    nncore.save_checkpoint(checkpoint_path(config, name), params, meta=dict(meta, stage=name, config_hash=config.hash))


def _load(config: RunConfig, name: str, hint: str = "train"):
    params, _, meta = nncore.load_checkpoint(_require(checkpoint_path(config, name), f"{name} checkpoint", hint))
    if meta.get("stage") != name:
        raise nncore.CheckpointError(f"{checkpoint_path(config, name)} has stage tag {meta.get('stage')!r}")
    return params, meta


def schedule_for(config: RunConfig) -> dif.NoiseSchedule:
    return dif.NoiseSchedule.linear(beta_start=config.beta_start, beta_end=config.beta_end)


def classifier_config(config: RunConfig) -> clf.ClassifierConfig:
    return clf.ClassifierConfig(config.epochs, config.classifier_batch, config.classifier_lr)


def _seed(config: RunConfig, stage: str) -> int:
    return config.train_seed * 100 + SEED_OFFSETS[stage]


def load_teacher(config: RunConfig) -> clf.TeacherClassifier:
    params, meta = _load(config, "teacher", "train --stage teacher")
    return clf.TeacherClassifier(_unprefix(params, "body"), _unprefix(params, "head"), meta["n_classes"],
                                 meta["val_accuracy"])


def load_student(config: RunConfig) -> clf.StudentEncoder:
    params, _ = _load(config, "student", "train --stage distill")
    return clf.StudentEncoder(params)


def load_head(config: RunConfig) -> clf.LatentClassifier:
    student = load_student(config)
    params, meta = _load(config, "head", "train --stage head")
    return clf.LatentClassifier(student, params, True, meta["n_classes"], meta["val_accuracy"])


def load_nondistilled(config: RunConfig) -> clf.LatentClassifier:
    params, meta = _load(config, "nondistilled", "train --stage nondistilled")
    return clf.LatentClassifier(clf.StudentEncoder(_unprefix(params, "body")), _unprefix(params, "head"), False,
                                meta["n_classes"], meta["val_accuracy"])


def load_denoiser(config: RunConfig) -> dif.DenoiserNet:
    params, meta = _load(config, "diffusion", "train --stage diffusion")
    return dif.denoiser_from_checkpoint(params, meta)


# -- training stages ------------------------------------------------------------------

def train(config: RunConfig, stage: str = "all") -> dict:
    """Run one training stage (or all of them). Returns a summary of the fitted models."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    feats = load_features(config)
    if stage == "all" or not checkpoint_path(config, "stats").exists():
        lat, mel = fit_and_save_stats(config, feats)
    else:
        lat, mel = load_stats(config)
    patches, latents = patches_and_latents(feats, lat, mel)
    tr, va = feats.mask("train"), feats.mask("val")
    y = feats.labels
    ccfg = classifier_config(config)
    summary = {}
    run_all = stage == "all"

    if run_all or stage == "diffusion":
        dcfg = dif.DiffusionConfig(config.diffusion_steps, config.diffusion_batch, config.diffusion_lr,
                                   config.cond_dropout, config.hidden)
        net, loss_log = dif.train_denoiser(latents[tr], y[tr], schedule_for(config), dcfg, _seed(config, "diffusion"))
        meta = dif.denoiser_meta(net, dcfg)
        meta["schedule"] = {"beta_start": config.beta_start, "beta_end": config.beta_end, "T": dif.T_TRAIN}
        _save(config, "diffusion", net.params, meta)
        config.reports_path.mkdir(parents=True, exist_ok=True)
        (config.reports_path / "diffusion_loss.json").write_text(
            json.dumps({"config_hash": config.hash, "loss": loss_log}) + "\n")
        summary["diffusion_final_loss"] = loss_log[-1][1]

    if run_all or stage == "teacher":
        teacher = clf.train_teacher(patches[tr], y[tr], patches[va], y[va], ccfg, _seed(config, "teacher"))
        _save(config, "teacher", _prefixed(body=teacher.body, head=teacher.head),
              {"n_classes": teacher.n_classes, "val_accuracy": teacher.val_accuracy})
        summary["teacher_val_acc"] = teacher.val_accuracy

    if run_all or stage == "distill":
        teacher = load_teacher(config)
        feats_t = teacher.features(patches)
        student, val_cos = clf.distill_student(latents[tr], feats_t[tr], latents[va], feats_t[va], ccfg,
                                               _seed(config, "student"))
        _save(config, "student", student.params, {"val_cosine": val_cos})
        summary["student_val_cosine"] = val_cos

    if run_all or stage == "head":
        student = load_student(config)
        head = clf.train_latent_head(student, latents[tr], y[tr], latents[va], y[va], ccfg, _seed(config, "head"))
        _save(config, "head", head.head, {"n_classes": head.n_classes, "val_accuracy": head.val_accuracy})
        summary["head_val_acc"] = head.val_accuracy

    if run_all or stage == "nondistilled":
        nd = clf.train_nondistilled(latents[tr], y[tr], latents[va], y[va], ccfg, _seed(config, "nondistilled"))
        _save(config, "nondistilled", _prefixed(body=nd.encoder.params, head=nd.head),
              {"n_classes": nd.n_classes, "val_accuracy": nd.val_accuracy})
        summary["nondistilled_val_acc"] = nd.val_accuracy
    return summary


# -- loaded model bundle --------------------------------------------------------------

@dataclass
class Bundle:
    config: RunConfig
    net: dif.DenoiserNet
    schedule: dif.NoiseSchedule
    teacher: clf.TeacherClassifier
    head: clf.LatentClassifier
    nondistilled: clf.LatentClassifier | None
    latent_stats: ls.LatentStats
    mel_stats: dsp.MelStats

    @property
    def tone(self) -> Models:
        return Models(self.net, self.schedule, self.head)

    def decode(self, latent) -> dsp.MelPatch:
        return ls.decode(latent, self.latent_stats, self.mel_stats)


def load_bundle(config: RunConfig, need_nondistilled: bool = False) -> Bundle:
    lat, mel = load_stats(config)
    nd = load_nondistilled(config) if need_nondistilled else None
    return Bundle(config, load_denoiser(config), schedule_for(config), load_teacher(config), load_head(config),
                  nd, lat, mel)


# -- evaluation -----------------------------------------------------------------------

def matrix_config(config: RunConfig) -> MatrixConfig:
    return MatrixConfig(config.seeds_per_pair, config.eval_seed, config.strategy_list, config.w, config.window,
                        config.fallback, config.min_confidence, config.eval_seed, config.kad_scale)


def reference_features(bundle: Bundle) -> dict:
    feats = load_features(bundle.config)
    patches = (feats.raw - bundle.mel_stats.mean) / bundle.mel_stats.std
    train = feats.mask("train")
    return {k: bundle.teacher.features(patches[train & (feats.labels == k)]) for k in range(bundle.teacher.n_classes)}


def generation_check(bundle: Bundle, per_class: int = 20, seed_base: int = 50_000, w: float | None = None) -> dict:
    """Condition-only generation: accuracy of the three classifiers on decoded samples."""
    w = bundle.config.w if w is None else w
    n_classes = bundle.teacher.n_classes
    xs, ys = [], []
    for c in range(n_classes):
        for j in range(per_class):
            traj = dif.sample(bundle.net, bundle.schedule, dif.constant_plan(c), w,
                              seed=seed_base + c * 1000 + j)
            xs.append(traj.x0)
            ys.append(c)
    x, y = np.stack(xs), np.array(ys)
    out = {"n": len(y), "w": w,
           "teacher": clf.accuracy(bundle.teacher.logits(ls.decode(x, bundle.latent_stats)), y),
           "distilled": clf.accuracy(bundle.head.logits(x), y),
           "latent_mean": float(x.mean()), "latent_std_min": float(x.std(0).min()),
           "latent_std_max": float(x.std(0).max())}
    if bundle.nondistilled is not None:
        out["nondistilled"] = clf.accuracy(bundle.nondistilled.logits(x), y)
    return out


def evaluate(config: RunConfig, workers: int = 1) -> tuple[MetricsReport, dict]:
    bundle = load_bundle(config, need_nondistilled=True)
    models = EvalModels(bundle.tone, bundle.teacher, bundle.latent_stats, bundle.mel_stats, reference_features(bundle))
    report = run_matrix(models, matrix_config(config), workers, config.hash)
    report.write(config.reports_path)
    gen = generation_check(bundle)
    gen["config_hash"] = config.hash
    (config.reports_path / "generation.json").write_text(json.dumps(gen, indent=1, sort_keys=True) + "\n")
    return report, gen


# -- single edit and the swap sweep ------------------------------------------------

def _relative_l2(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, np.float64) - b) / np.linalg.norm(np.asarray(b, np.float64)))


def _emit_clip(bundle: Bundle, latent, out_dir: Path, stem: str, meta: dict) -> None:
    patch = bundle.decode(latent)
    dsp.export_png(patch.values, out_dir / f"{stem}.png", db_scale=False, meta=meta)
    audio = dsp.griffin_lim(patch, bundle.config.griffin_lim_iters, seed=0, stats=bundle.mel_stats)
    sc.write_wav(out_dir / f"{stem}.wav", audio.samples)


def edit_record(bundle: Bundle, request: EditRequest, result: EditResult) -> dict:
    src_patch, ed_patch = bundle.decode(result.source), bundle.decode(result.edited)
    pred = clf.classify_patch(bundle.teacher, ed_patch)
    return {"seed": request.seed, "src": request.source, "tgt": request.target, "strategy": request.strategy,
            "w": request.w, "t_star": result.decision.t_star, "status": result.decision.status,
            "trace": [[p.label, round(p.confidence, 6)] for p in result.decision.trace],
            "metrics": {"chroma_to_source": chroma_distance(ed_patch, src_patch, bundle.mel_stats),
                        "teacher_pred": pred.label, "teacher_conf": pred.confidence,
                        "latent_rel_l2": _relative_l2(result.edited, result.source)},
            "config_hash": bundle.config.hash}


def run_edit(config: RunConfig, request: EditRequest) -> tuple[Path, dict]:
    bundle = load_bundle(config)
    result = edit(request, bundle.tone)
    name = f"seed{request.seed}_{request.source}to{request.target}_{request.strategy}"
    out_dir = config.reports_path / "edits" / name
    out_dir.mkdir(parents=True, exist_ok=True)
    record = edit_record(bundle, request, result)
    meta = {"config_hash": config.hash, "seed": request.seed}
    _emit_clip(bundle, result.source, out_dir, "source", dict(meta, role="source"))
    _emit_clip(bundle, result.edited, out_dir, "edited", dict(meta, role="edited"))
    (out_dir / "record.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    return out_dir, record


def run_demo(config: RunConfig, emit_media: bool = True) -> dict:
    """Swap the condition at each listed step for a few seeds; record distance to the unedited output."""
    bundle = load_bundle(config)
    swaps = config.int_list(config.demo_swaps)
    seeds = config.int_list(config.demo_seeds)
    src, tgt = config.demo_src, config.demo_tgt
    out_dir = config.reports_path / "demo"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"config_hash": config.hash, "src": src, "tgt": tgt, "w": config.w, "swaps": swaps, "runs": []}
    grid = []
    for seed in seeds:
        src_traj, _ = probe_trajectory(bundle.net, bundle.schedule, bundle.head, seed, src, config.w)
        src_patch = bundle.decode(src_traj.x0)
        row = [src_patch.values]
        run = {"seed": seed, "source_pred": clf.classify_patch(bundle.teacher, src_patch).label, "swaps": []}
        for t_star in swaps:
            traj = dif.sample(bundle.net, bundle.schedule, dif.swap_plan(src, tgt, t_star), config.w, seed=seed)
            patch = bundle.decode(traj.x0)
            run["swaps"].append({"t_star": t_star,
                                 "chroma_to_source": chroma_distance(patch, src_patch, bundle.mel_stats),
                                 "latent_l2": float(np.linalg.norm(traj.x0.astype(np.float64) - src_traj.x0)),
                                 "source_norm": float(np.linalg.norm(src_traj.x0.astype(np.float64))),
                                 "teacher_pred": clf.classify_patch(bundle.teacher, patch).label})
            row.append(patch.values)
            if emit_media:
                audio = dsp.griffin_lim(patch, config.griffin_lim_iters, seed=0, stats=bundle.mel_stats)
                sc.write_wav(out_dir / f"seed{seed}_swap{t_star:02d}.wav", audio.samples)
        if emit_media:
            audio = dsp.griffin_lim(src_patch, config.griffin_lim_iters, seed=0, stats=bundle.mel_stats)
            sc.write_wav(out_dir / f"seed{seed}_source.wav", audio.samples)
        grid.append(row)
        summary["runs"].append(run)
    (out_dir / "demo.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if emit_media:
        _plot_grid(grid, summary, out_dir / "demo_grid.png")
    return summary


def _plot_grid(grid, summary: dict, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [s.name for s in sc.INSTRUMENTS]
    n_rows, n_cols = len(grid), len(grid[0])
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.6 * n_cols, 1.8 * n_rows), squeeze=False)
    for r, (row, run) in enumerate(zip(grid, summary["runs"])):
        for c, values in enumerate(row):
            ax = axes[r][c]
            ax.imshow(values, origin="lower", aspect="auto", cmap="magma", vmin=-3, vmax=3)
            ax.set_xticks([])
            ax.set_yticks([])
            if c == 0:
                ax.set_title(f"source ({names[summary['src']]})", fontsize=7)
                ax.set_ylabel(f"seed {run['seed']}", fontsize=7)
            else:
                s = run["swaps"][c - 1]
                ax.set_title(f"t*={s['t_star']} -> {names[s['teacher_pred']]}\nchroma {s['chroma_to_source']:.2f}",
                             fontsize=6)
    fig.suptitle(f"{names[summary['src']]} -> {names[summary['tgt']]}, w={summary['w']} (hash {summary['config_hash']})",
                 fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Description": f"config_hash={summary['config_hash']}"})
    plt.close(fig)
