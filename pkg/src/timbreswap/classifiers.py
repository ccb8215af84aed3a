"""Teacher on mel patches, cosine-distilled student on latents, latent heads, non-distilled baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nncore
from .dsp import FILTERBANK, MelPatch, MelStats, log_mel, stft
from .latentspace import LATENT_DIM
from .synthcorpus import N_CLASSES, AudioClip

log = logging.getLogger(__name__)

FEATURE_DIM = 128
PATCH_DIM = 32 * 32


class TrainingFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    min_teacher_acc: float = 0.9
    min_student_cos: float = 0.5


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    probs: np.ndarray


def _prediction(logits_row) -> Prediction:
    p = nncore.softmax(np.asarray(logits_row, dtype=np.float64)[None])[0]
    label = int(np.argmax(logits_row))  # first maximum: ties go to the lowest id
    return Prediction(label, float(p[label]), p)


def teacher_spec(n_classes: int = N_CLASSES) -> tuple[nncore.NetSpec, nncore.NetSpec]:
    body = nncore.mlp([PATCH_DIM, 256, FEATURE_DIM], "relu", "relu")
    head = nncore.mlp([FEATURE_DIM, n_classes], "relu")
    return body, head


def student_spec() -> nncore.NetSpec:
    return nncore.mlp([LATENT_DIM, 128, FEATURE_DIM], "relu", "none")


def head_spec(n_classes: int = N_CLASSES) -> nncore.NetSpec:
    return nncore.mlp([FEATURE_DIM, n_classes], "relu")


@dataclass
class TeacherClassifier:
    body: nncore.ParamStore
    head: nncore.ParamStore
    n_classes: int = N_CLASSES
    val_accuracy: float = float("nan")

    def features(self, patches) -> np.ndarray:
        x = np.asarray(patches, dtype=np.float32).reshape(-1, PATCH_DIM)
        return nncore.forward(teacher_spec(self.n_classes)[0], self.body, x)[0]

    def logits(self, patches) -> np.ndarray:
        return nncore.forward(teacher_spec(self.n_classes)[1], self.head, self.features(patches))[0]


@dataclass
class StudentEncoder:
    params: nncore.ParamStore

    def features(self, latents) -> np.ndarray:
        x = np.asarray(latents, dtype=np.float32).reshape(-1, LATENT_DIM)
        return nncore.forward(student_spec(), self.params, x)[0]


@dataclass
class LatentClassifier:
    encoder: StudentEncoder
    head: nncore.ParamStore
    distilled: bool = True
    n_classes: int = N_CLASSES
    val_accuracy: float = float("nan")

    def logits(self, latents) -> np.ndarray:
        return nncore.forward(head_spec(self.n_classes), self.head, self.encoder.features(latents))[0]


# -- shared minibatch loop ----------------------------------------------------------

def _fit(spec, params, inputs, loss_fn, config: ClassifierConfig, rng, tag: str) -> None:
    state = nncore.AdamState.for_params(params, lr=config.lr)
    n = len(inputs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            out, trace = nncore.forward(spec, params, inputs[idx])
            loss, g = loss_fn(out, idx)
            if not np.isfinite(loss):
                raise TrainingFailure(f"{tag}: non-finite loss in epoch {epoch}")
            nncore.adam_step(params, nncore.backward(spec, params, trace, g), state)
            total += loss * len(idx)
        log.info("%s epoch %d loss %.4f", tag, epoch + 1, total / n)


def _join(a: nncore.NetSpec, b: nncore.NetSpec) -> nncore.NetSpec:
    return nncore.NetSpec(a.layers + b.layers)


def _split_params(params: nncore.ParamStore, n_first: int) -> tuple[nncore.ParamStore, nncore.ParamStore]:
    first, second = nncore.ParamStore(), nncore.ParamStore()
    for name, arr in params.arrays.items():
        layer = int(name[1:name.index(".")])
        if layer < n_first:
            first.add(name, arr)
        else:
            second.add(f"l{layer - n_first}{name[name.index('.'):]}", arr)
    return first, second


def accuracy(logits, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def train_teacher(train_patches, train_labels, val_patches, val_labels, config: ClassifierConfig = ClassifierConfig(),
                  seed: int = 0, n_classes: int = N_CLASSES) -> TeacherClassifier:
    body_spec, hspec = teacher_spec(n_classes)
    spec = _join(body_spec, hspec)
    params = nncore.init_params(spec, seed)
    x = np.asarray(train_patches, dtype=np.float32).reshape(-1, PATCH_DIM)
    y = np.asarray(train_labels)
    _fit(spec, params, x, lambda out, idx: nncore.cross_entropy(out, y[idx]), config,
         np.random.default_rng([seed, 11]), "teacher")
    body, head = _split_params(params, len(body_spec.layers))
    teacher = TeacherClassifier(body, head, n_classes)
    teacher.val_accuracy = accuracy(teacher.logits(val_patches), val_labels)
    log.info("teacher val accuracy %.3f", teacher.val_accuracy)
    if teacher.val_accuracy < config.min_teacher_acc:
        raise TrainingFailure(f"teacher val accuracy {teacher.val_accuracy:.3f} < {config.min_teacher_acc}")
    return teacher


def teacher_features(teacher: TeacherClassifier, patch) -> np.ndarray:
    values = patch.values if isinstance(patch, MelPatch) else patch
    return teacher.features(values)


def mean_cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.mean(np.sum(a * b, 1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))))


def distill_student(train_latents, train_targets, val_latents, val_targets, config: ClassifierConfig = ClassifierConfig(),
                    seed: int = 0) -> tuple[StudentEncoder, float]:
    """Fit the student so its output aligns (cosine) with precomputed teacher features."""
    spec = student_spec()
    params = nncore.init_params(spec, seed)
    x = np.asarray(train_latents, dtype=np.float32)
    targets = np.asarray(train_targets, dtype=np.float32)
    _fit(spec, params, x, lambda out, idx: nncore.cosine_loss(out, targets[idx]), config,
         np.random.default_rng([seed, 12]), "student")
    student = StudentEncoder(params)
    val_cos = mean_cosine(student.features(val_latents), val_targets)
    log.info("student val cosine %.3f", val_cos)
    if val_cos < config.min_student_cos:
        raise TrainingFailure(f"student mean val cosine {val_cos:.3f} < {config.min_student_cos}")
    return student, val_cos


def train_latent_head(student: StudentEncoder, train_latents, train_labels, val_latents=None, val_labels=None,
                      config: ClassifierConfig = ClassifierConfig(), seed: int = 0,
                      n_classes: int = N_CLASSES) -> LatentClassifier:
    """Head-only training on frozen student features."""
    spec = head_spec(n_classes)
    params = nncore.init_params(spec, seed)
    feats = student.features(train_latents)
    y = np.asarray(train_labels)
    _fit(spec, params, feats, lambda out, idx: nncore.cross_entropy(out, y[idx]), config,
         np.random.default_rng([seed, 13]), "head")
    clf = LatentClassifier(student, params, True, n_classes)
    if val_latents is not None:
        clf.val_accuracy = accuracy(clf.logits(val_latents), val_labels)
    return clf


def train_nondistilled(train_latents, train_labels, val_latents=None, val_labels=None,
                       config: ClassifierConfig = ClassifierConfig(), seed: int = 0,
                       n_classes: int = N_CLASSES) -> LatentClassifier:
    """Student architecture plus head trained end-to-end with cross-entropy."""
    body_spec, hspec = student_spec(), head_spec(n_classes)
    spec = _join(body_spec, hspec)
    params = nncore.init_params(spec, seed)
    x = np.asarray(train_latents, dtype=np.float32)
    y = np.asarray(train_labels)
    _fit(spec, params, x, lambda out, idx: nncore.cross_entropy(out, y[idx]), config,
         np.random.default_rng([seed, 14]), "nondistilled")
    body, head = _split_params(params, len(body_spec.layers))
    clf = LatentClassifier(StudentEncoder(body), head, False, n_classes)
    if val_latents is not None:
        clf.val_accuracy = accuracy(clf.logits(val_latents), val_labels)
    return clf


def classify_latent(clf: LatentClassifier, latent) -> Prediction:
    return _prediction(clf.logits(np.asarray(latent).reshape(1, LATENT_DIM))[0])


def classify_patch(teacher: TeacherClassifier, patch) -> Prediction:
    values = patch.values if isinstance(patch, MelPatch) else patch
    return _prediction(teacher.logits(np.asarray(values).reshape(1, PATCH_DIM))[0])


def classify_audio(teacher: TeacherClassifier, clip: AudioClip, mel_stats: MelStats) -> Prediction:
    return classify_patch(teacher, log_mel(stft(clip), FILTERBANK, mel_stats))


def predict_labels(logits) -> np.ndarray:
    return np.argmax(logits, axis=1)
