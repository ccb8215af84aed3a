"""Swap-timestep selection and two-pass instrument editing.

Pass 1 samples under the source condition while a latent classifier labels the
x0 estimate at every step. A selector turns that prediction trace into a swap
step t*, and pass 2 re-runs the same seed with the target condition from t*
downwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffusion as dif
from .classifiers import LatentClassifier, Prediction, classify_latent

STRATEGIES = ("diff_tone", "diff_tone_online", "random", "midpoint")
FALLBACKS = ("error", "midpoint")
MIDPOINT = 25


@dataclass(frozen=True)
class EditRequest:
    seed: int
    source: int
    target: int
    w: float = 3.0
    strategy: str = "diff_tone"
    fallback: str = "midpoint"
    window: int = 5
    min_confidence: float = 0.0
    random_seed: int = 0

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target instruments must differ")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}")


@dataclass
class SwapDecision:
    t_star: int | None
    trace: list[Prediction]
    status: str  # selected | no_change_fallback | no_change_error
    strategy: str


@dataclass
class EditResult:
    edited: np.ndarray
    source: np.ndarray
    decision: SwapDecision
    trajectory: dif.Trajectory | None = None
    metrics: dict = field(default_factory=dict)


class NoChangeError(RuntimeError):
    def __init__(self, trace):
        super().__init__("classifier never changed its prediction along the source trajectory")
        self.trace = trace


@dataclass
class Models:
    net: dif.DenoiserNet
    schedule: dif.NoiseSchedule
    probe: LatentClassifier


def probe_trajectory(net, schedule, clf: LatentClassifier, seed: int, source: int, w: float = 3.0):
    """Pass 1: full source-conditioned sampling with the classifier on every x0 estimate.

    The returned trace is ordered from the first sampling step (t = 49) to t = 0.
    """
    traj = dif.sample(net, schedule, dif.constant_plan(source, schedule.n_steps), w, seed=seed,
                      probe=lambda x0, t: classify_latent(clf, x0))
    return traj, [rec.prediction for rec in traj.steps]


def _labels(trace, min_confidence: float = 0.0):
    """(t, label) pairs from a trace ordered t = n-1 .. 0, dropping low-confidence entries."""
    n = len(trace)
    out = []
    for i, p in enumerate(trace):
        label = p.label if isinstance(p, Prediction) else int(p)
        conf = p.confidence if isinstance(p, Prediction) else 1.0
        if conf >= min_confidence:
            out.append((n - 1 - i, label))
    return out


def select_timestep_last_change(trace, min_confidence: float = 0.0) -> int | None:
    """Smallest t whose prediction differs from the one at the preceding step (t + 1)."""
    if len(trace) < 2:
        raise ValueError("trace needs at least two predictions")
    seq = _labels(trace, min_confidence)
    t_star = None
    for (_, prev), (t, cur) in zip(seq, seq[1:]):
        if cur != prev:
            t_star = t
    return t_star


def select_timestep_online(trace, window: int = 5, min_confidence: float = 0.0) -> int | None:
    """Streaming rule: report the latest change once the prediction has held for ``window`` further steps.

    Reaching the end of the stream confirms a pending change.
    """
    if window < 1:
        raise ValueError("stability window must be >= 1")
    seq = _labels(trace, min_confidence)
    pending, held = None, 0
    for (_, prev), (t, cur) in zip(seq, seq[1:]):
        if cur != prev:
            pending, held = t, 0
        elif pending is not None:
            held += 1
            if held >= window:
                return pending
    return pending


def select_timestep_random(rng: np.random.Generator, n_steps: int = dif.N_STEPS) -> int:
    return int(rng.integers(1, n_steps - 1))


def select_timestep_midpoint(n_steps: int = dif.N_STEPS) -> int:
    return n_steps // 2


def decide(request: EditRequest, trace, n_steps: int = dif.N_STEPS) -> SwapDecision:
    if request.strategy == "random":
        rng = np.random.default_rng([request.random_seed, request.seed, request.source, request.target])
        return SwapDecision(select_timestep_random(rng, n_steps), trace, "selected", "random")
    if request.strategy == "midpoint":
        return SwapDecision(select_timestep_midpoint(n_steps), trace, "selected", "midpoint")
    if request.strategy == "diff_tone":
        t_star = select_timestep_last_change(trace, request.min_confidence)
    else:
        t_star = select_timestep_online(trace, request.window, request.min_confidence)
    if t_star is not None:
        return SwapDecision(t_star, trace, "selected", request.strategy)
    if request.fallback == "error":
        raise NoChangeError(trace)
    return SwapDecision(select_timestep_midpoint(n_steps), trace, "no_change_fallback", request.strategy)


def edit(request: EditRequest, models: Models, source_run=None) -> EditResult:
    """Two-pass edit. ``source_run`` is an optional precomputed (trajectory, trace) from pass 1."""
    net, schedule = models.net, models.schedule
    if source_run is None:
        source_run = probe_trajectory(net, schedule, models.probe, request.seed, request.source, request.w)
    src_traj, trace = source_run
    decision = decide(request, trace, schedule.n_steps)
    plan = dif.swap_plan(request.source, request.target, decision.t_star, schedule.n_steps)
    traj = dif.sample(net, schedule, plan, request.w, seed=request.seed)
    return EditResult(traj.x0, src_traj.x0, decision, traj)
