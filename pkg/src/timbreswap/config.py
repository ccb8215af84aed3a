"""Flat INI run configuration with a canonical text form and hash."""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

ROOT_ENV = "TIMBRESWAP_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # paths (corpus/models/reports are relative to root unless absolute)
    root: str = "artifacts"
    corpus_dir: str = "corpus"
    models_dir: str = "models"
    reports_dir: str = "reports"
    # seeds
    corpus_seed: int = 1234
    train_seed: int = 0
    eval_seed: int = 10_000
    # corpus
    clips_per_instrument: int = 300
    val_fraction: float = 0.1
    # diffusion
    diffusion_steps: int = 30_000
    diffusion_batch: int = 64
    diffusion_lr: float = 1e-3
    cond_dropout: float = 0.1
    hidden: int = 256
    beta_start: float = 1e-4
    beta_end: float = 0.035
    # classifiers
    epochs: int = 20
    classifier_batch: int = 64
    classifier_lr: float = 1e-3
    # editing
    w: float = 3.0
    window: int = 5
    fallback: str = "midpoint"
    min_confidence: float = 0.0
    # evaluation
    seeds_per_pair: int = 5
    strategies: str = "diff_tone,midpoint,random"
    kad_scale: float = 100.0
    # demo sweep
    demo_seeds: str = "7,8,9"
    demo_src: int = 1
    demo_tgt: int = 2
    demo_swaps: str = "45,40,35,30,25,20,15,10,5,0"
    griffin_lim_iters: int = 32

    def __post_init__(self):
        if self.fallback not in ("error", "midpoint"):
            raise ConfigError(f"fallback must be 'error' or 'midpoint', got {self.fallback!r}")
        if self.w < 0:
            raise ConfigError("w must be >= 0")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.demo_src == self.demo_tgt:
            raise ConfigError("demo_src and demo_tgt must differ")

    # -- derived paths --------------------------------------------------------

    def _under_root(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.root) / p

    @property
    def corpus_path(self) -> Path:
        return self._under_root(self.corpus_dir)

    @property
    def models_path(self) -> Path:
        return self._under_root(self.models_dir)

    @property
    def reports_path(self) -> Path:
        return self._under_root(self.reports_dir)

    @staticmethod
    def int_list(text: str) -> list[int]:
        return [int(v) for v in text.split(",") if v.strip()]

    @property
    def strategy_list(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in self.strategies.split(",") if s.strip())

    # -- canonical text and hash -------------------------------------------------

    def canonical(self) -> str:
        """Sorted key = value lines; paths are left out so relocating artifacts keeps the hash."""
        skip = {"root", "corpus_dir", "models_dir", "reports_dir"}
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in sorted(fields(self), key=lambda f: f.name)
                       if f.name not in skip)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        return "[run]\n" + "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce(name: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read an INI file (single [run] section; unknown keys rejected).

    Precedence for the root directory: explicit override, then the environment, then the file.
    """
    values = {}
    types = {f.name: type(f.default) for f in fields(RunConfig)}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}".replace("\n", " ")) from exc
        for section in parser.sections():
            if section != "run":
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in types:
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = _coerce(key, raw, types[key])
    for key, val in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    if os.environ.get(ROOT_ENV) and "root" not in (overrides or {}):
        values["root"] = os.environ[ROOT_ENV]
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def with_root(config: RunConfig, root) -> RunConfig:
    return replace(config, root=str(root))
