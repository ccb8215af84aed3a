"""Noise schedule, conditional epsilon-denoiser, DDIM (eta=0) sampling with classifier-free guidance."""
from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nncore
from .latentspace import LATENT_DIM
from .synthcorpus import N_CLASSES

log = logging.getLogger(__name__)

T_TRAIN = 200
N_STEPS = 50
TIME_EMB_DIM = 32
COND_EMB_DIM = 16
NULL = None  # the unconditional condition


class TrainingError(RuntimeError):
    pass


# -- schedule -------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    n_steps: int = N_STEPS

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def step_timesteps(self) -> np.ndarray:
        """Training timestep of each sampling step index 0..n_steps-1."""
        return np.arange(self.n_steps) * (self.T // self.n_steps)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T})")
        return float(self.alpha_bars[t])

    @classmethod
    def linear(cls, T: int = T_TRAIN, beta_start: float = 1e-4, beta_end: float = 0.035,
               n_steps: int = N_STEPS) -> "NoiseSchedule":
        """Linear betas. With T=200 an end value of 0.02 leaves alpha_bar(199) near 0.13,
        so the default end is raised to 0.035 to push it below 0.05."""
        return cls(np.linspace(beta_start, beta_end, T), n_steps)

    @classmethod
    def from_alpha_bars(cls, alpha_bars, n_steps: int | None = None) -> "NoiseSchedule":
        ab = np.asarray(alpha_bars, dtype=np.float64)
        prev = np.concatenate([[1.0], ab[:-1]])
        with np.errstate(divide="ignore", invalid="ignore"):
            alphas = np.where(prev > 0, ab / prev, 0.0)
        return _FixedSchedule(1.0 - alphas, n_steps or len(ab), ab)


@dataclass(frozen=True)
class _FixedSchedule(NoiseSchedule):
    fixed_alpha_bars: np.ndarray = field(default=None)

    @property
    def alpha_bars(self) -> np.ndarray:
        return self.fixed_alpha_bars

    @property
    def step_timesteps(self) -> np.ndarray:
        return np.arange(self.T)


def q_sample(x0, t: int, noise, schedule: NoiseSchedule):
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(noise)


def predict_x0(x_t, eps, t: int, schedule: NoiseSchedule):
    ab = schedule.alpha_bar(t)
    if ab <= 0:
        raise ZeroDivisionError(f"alpha_bar is zero at timestep {t}")
    return (np.asarray(x_t) - np.sqrt(1.0 - ab) * np.asarray(eps)) / np.sqrt(ab)


def ddim_step(x_t, eps, t: int, t_prev: int, schedule: NoiseSchedule):
    """Deterministic update to ``t_prev``; ``t_prev == -1`` returns the x0 estimate."""
    if not -1 <= t_prev < t:
        raise ValueError(f"ddim_step must move backwards: t={t}, t_prev={t_prev}")
    x0 = predict_x0(x_t, eps, t, schedule)
    if t_prev == -1:
        return x0
    ab_prev = schedule.alpha_bar(t_prev)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * np.asarray(eps)


# -- denoiser -------------------------------------------------------------------

def timestep_embedding(t, dim: int = TIME_EMB_DIM, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def denoiser_spec(n_classes: int = N_CLASSES, hidden: int = 256) -> nncore.NetSpec:
    emb = nncore.Embedding("cond", n_classes + 1, COND_EMB_DIM)
    return nncore.mlp([LATENT_DIM + TIME_EMB_DIM + COND_EMB_DIM, hidden, hidden, LATENT_DIM], "silu", "none", [emb])


@dataclass
class DenoiserNet:
    spec: nncore.NetSpec
    params: nncore.ParamStore
    n_classes: int = N_CLASSES
    unconditional: bool = False

    def cond_rows(self, cond) -> np.ndarray:
        """Map condition ids (None = null) to embedding rows."""
        cond = np.atleast_1d(np.asarray(cond, dtype=object))
        rows = np.array([self.n_classes if (c is None or self.unconditional) else int(c) for c in cond])
        if np.any(rows > self.n_classes) or np.any(rows < 0):
            raise ValueError(f"condition id out of range 0..{self.n_classes - 1}")
        return rows

    def eps(self, x_t, t, cond) -> np.ndarray:
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float32))
        n = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,))
        rows = self.cond_rows(cond if np.ndim(cond) else [cond] * n)
        inp = np.concatenate([x_t, timestep_embedding(t)], axis=1)
        out, _ = nncore.forward(self.spec, self.params, inp, {"cond": rows})
        return out


def eps_predict(net: DenoiserNet, x_t, t: int, cond, w: float = 3.0) -> np.ndarray:
    """Classifier-free guided noise estimate eps_null + w (eps_cond - eps_null)."""
    if w < 0:
        raise ValueError("guidance scale must be >= 0")
    if cond is NULL or w == 0:
        return net.eps(x_t, t, NULL)
    eps_c = net.eps(x_t, t, cond)
    if w == 1:
        return eps_c
    eps_n = net.eps(x_t, t, NULL)
    return eps_n + np.float32(w) * (eps_c - eps_n)


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 30000
    batch_size: int = 64
    lr: float = 1e-3
    cond_dropout: float = 0.1
    hidden: int = 256
    log_every: int = 500


def train_denoiser(latents, labels, schedule: NoiseSchedule, config: DiffusionConfig = DiffusionConfig(),
                   seed: int = 0, n_classes: int = N_CLASSES):
    """Epsilon-prediction MSE training with condition dropout. Returns (net, loss_log)."""
    x = np.asarray(latents, dtype=np.float32)
    y = np.asarray(labels, dtype=np.int64)
    spec = denoiser_spec(n_classes, config.hidden)
    params = nncore.init_params(spec, seed)
    state = nncore.AdamState.for_params(params, lr=config.lr)
    rng = np.random.default_rng([seed, 1])
    sqrt_ab = np.sqrt(schedule.alpha_bars).astype(np.float32)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bars).astype(np.float32)
    loss_log = []
    running = 0.0
    for step in range(config.steps):
        idx = rng.integers(0, len(x), config.batch_size)
        t = rng.integers(0, schedule.T, config.batch_size)
        noise = rng.standard_normal((config.batch_size, x.shape[1])).astype(np.float32)
        drop = rng.random(config.batch_size) < config.cond_dropout
        rows = np.where(drop, n_classes, y[idx])
        x_t = sqrt_ab[t, None] * x[idx] + sqrt_1mab[t, None] * noise
        inp = np.concatenate([x_t, timestep_embedding(t)], axis=1)
        out, trace = nncore.forward(spec, params, inp, {"cond": rows})
        loss, g = nncore.mse(out, noise)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite denoiser loss at step {step}")
        nncore.adam_step(params, nncore.backward(spec, params, trace, g), state)
        running += loss
        if (step + 1) % config.log_every == 0 or step + 1 == config.steps:
            n = (step % config.log_every) + 1
            loss_log.append((step + 1, running / n))
            log.info("denoiser step %d loss %.4f", step + 1, running / n)
            running = 0.0
    net = DenoiserNet(spec, params, n_classes, unconditional=config.cond_dropout >= 1.0)
    return net, loss_log


def denoiser_meta(net: DenoiserNet, config: DiffusionConfig | None = None) -> dict:
    meta = {"stage": "diffusion", "n_classes": net.n_classes, "unconditional": net.unconditional,
            "hidden": net.spec.layers[0].n_out}
    if config is not None:
        meta["config"] = config.__dict__
    return meta


def denoiser_from_checkpoint(params: nncore.ParamStore, meta: dict) -> DenoiserNet:
    spec = denoiser_spec(meta["n_classes"], meta["hidden"])
    return DenoiserNet(spec, params, meta["n_classes"], meta["unconditional"])


# -- sampling -------------------------------------------------------------------

@dataclass
class StepRecord:
    t: int  # sampling step index, 0..49
    cond: int | None
    x_t: np.ndarray
    eps: np.ndarray
    x0_pred: np.ndarray
    prediction: object = None


@dataclass
class Trajectory:
    x_T: np.ndarray
    steps: list[StepRecord]
    seed: int | None
    w: float

    @property
    def x0(self) -> np.ndarray:
        return self.steps[-1].x0_pred

    def state_at(self, t: int) -> np.ndarray:
        """x_t entering sampling step t."""
        return self.steps[len(self.steps) - 1 - t].x_t

    def to_jsonl(self) -> str:
        def enc(a):
            return base64.b64encode(np.ascontiguousarray(a, dtype="<f4").tobytes()).decode("ascii")

        lines = [json.dumps({"seed": self.seed, "w": self.w, "x_T": enc(self.x_T)}, sort_keys=True)]
        for s in self.steps:
            rec = {"t": s.t, "cond": s.cond, "x_t": enc(s.x_t), "eps": enc(s.eps), "x0_pred": enc(s.x0_pred)}
            if s.prediction is not None:
                rec["pred"] = int(s.prediction.label)
                rec["confidence"] = float(s.prediction.confidence)
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"


def constant_plan(cond, n_steps: int = N_STEPS) -> tuple:
    return tuple([cond] * n_steps)


def swap_plan(source, target, t_star: int, n_steps: int = N_STEPS) -> tuple:
    """Steps t > t_star use ``source``, steps t <= t_star use ``target`` (indexed by t)."""
    if not 0 <= t_star < n_steps:
        raise ValueError(f"swap step {t_star} outside [0, {n_steps})")
    return tuple(target if t <= t_star else source for t in range(n_steps))


def _check_plan(plan, n_steps: int) -> None:
    if len(plan) != n_steps:
        raise ValueError(f"condition plan must cover {n_steps} steps, got {len(plan)}")
    order = [plan[t] for t in reversed(range(n_steps))]
    blocks = 1 + sum(a != b for a, b in zip(order, order[1:]))
    if blocks > 2:
        raise ValueError("condition plan must be constant or a single source->target swap")


def initial_noise(seed: int, dim: int = LATENT_DIM) -> np.ndarray:
    return np.random.default_rng([seed, 2]).standard_normal(dim).astype(np.float32)


def sample(net: DenoiserNet, schedule: NoiseSchedule, plan, w: float = 3.0, seed: int | None = None,
           x_T=None, probe: Callable | None = None) -> Trajectory:
    """Run the sampling steps highest-t first, recording every state and x0 estimate.

    ``plan[t]`` is the condition used at step index t. ``probe(x0_pred, t)`` is
    called after each step and its return value stored on the record.
    """
    n_steps = schedule.n_steps
    _check_plan(plan, n_steps)
    if x_T is None:
        if seed is None:
            raise ValueError("sample needs a seed or an explicit x_T")
        x_T = initial_noise(seed)
    x = np.asarray(x_T, dtype=np.float32).copy()
    ts = schedule.step_timesteps
    records = []
    for t in reversed(range(n_steps)):
        tt = int(ts[t])
        eps = eps_predict(net, x[None], tt, plan[t], w)[0]
        x0_pred = predict_x0(x, eps, tt, schedule).astype(np.float32)
        rec = StepRecord(t, plan[t], x, eps, x0_pred)
        if probe is not None:
            rec.prediction = probe(x0_pred, t)
        records.append(rec)
        x = ddim_step(x, eps, tt, int(ts[t - 1]) if t > 0 else -1, schedule).astype(np.float32)
    return Trajectory(np.asarray(x_T, dtype=np.float32), records, seed, w)
