"""Procedural instrument corpus: additive-synthesis tones, melodies, WAV + JSONL manifest."""
from __future__ import annotations

import dataclasses
import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 8000
CLIP_SECONDS = 2.0
CLIP_SAMPLES = 16000
CLIP_PEAK = 0.9
GENERATOR_VERSION = "synthcorpus-1"

# C-major pentatonic, two octaves from C4
PENTATONIC = (60, 62, 64, 67, 69, 72, 74, 76, 79, 81)
SPLITS = ("train", "val", "eval")


@dataclass(frozen=True)
class Envelope:
    attack: float
    decay: float
    sustain: float
    release: float
    sustain_level: float = 1.0

    @property
    def total(self) -> float:
        return self.attack + self.decay + self.sustain + self.release

    def render(self, n: int, sample_rate: int) -> np.ndarray:
        t = np.arange(n) / sample_rate
        knots_t = np.cumsum([0.0, self.attack, self.decay, self.sustain, self.release])
        knots_v = [0.0, 1.0, self.sustain_level, self.sustain_level, 0.0]
        if self.attack == 0.0:
            knots_v[0] = 1.0
        # np.interp needs strictly increasing x for clean steps; nudge zero-length segments
        knots_t = knots_t + np.arange(5) * 1e-9
        return np.interp(t, knots_t, knots_v, right=0.0)


@dataclass(frozen=True)
class InstrumentSpec:
    id: int
    name: str
    harmonic_amps: tuple[float, ...]
    partial_ratios: tuple[float, ...]
    envelope: Envelope
    vibrato_rate_hz: float = 0.0
    vibrato_depth_cents: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.harmonic_amps, dtype=float)
        if len(amps) == 0 or len(amps) > 12:
            raise ValueError(f"{self.name}: need 1..12 partials, got {len(amps)}")
        if len(self.partial_ratios) != len(amps):
            raise ValueError(f"{self.name}: amps/ratios length mismatch")
        if np.any(amps < 0) or np.any(amps > 1) or not np.any(amps > 0):
            raise ValueError(f"{self.name}: harmonic amps must lie in [0, 1] with one > 0")
        env = self.envelope
        if min(env.attack, env.decay, env.sustain, env.release) < 0:
            raise ValueError(f"{self.name}: negative envelope segment")


@dataclass(frozen=True)
class NoteEvent:
    midi_pitch: int
    onset_s: float
    duration_s: float
    velocity: float = 1.0

    def __post_init__(self):
        if not 48 <= self.midi_pitch <= 84:
            raise ValueError(f"midi pitch {self.midi_pitch} outside 48..84")
        if self.onset_s < 0 or self.duration_s <= 0:
            raise ValueError("note needs onset >= 0 and positive duration")
        if not 0.0 <= self.velocity <= 1.0:
            raise ValueError("velocity must lie in [0, 1]")

    @property
    def frequency(self) -> float:
        return 440.0 * 2.0 ** ((self.midi_pitch - 69) / 12.0)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: int = -1
    melody: list[NoteEvent] = field(default_factory=list)
    clip_id: str = ""
    seed: int = 0


def _harmonic(n):
    return tuple(float(k) for k in range(1, n + 1))


INSTRUMENTS: tuple[InstrumentSpec, ...] = (
    InstrumentSpec(0, "pluck", (1.0, 0.2, 0.6, 0.1, 0.35, 0.05, 0.2, 0.0, 0.1), _harmonic(9),
                   Envelope(0.005, 0.3, 0.0, 0.1, 0.15)),
    InstrumentSpec(1, "organ", (0.5, 1.0, 0.3, 0.8, 0.0, 0.6, 0.0, 0.5), _harmonic(8),
                   Envelope(0.02, 0.02, 0.4, 0.05, 1.0)),
    InstrumentSpec(2, "flute", (1.0, 0.15, 0.05), _harmonic(3),
                   Envelope(0.08, 0.05, 0.3, 0.05, 0.8), vibrato_rate_hz=5.0, vibrato_depth_cents=15.0),
    InstrumentSpec(3, "brass", (0.4, 0.7, 1.0, 0.9, 0.8, 0.6, 0.5, 0.4, 0.3, 0.25, 0.2, 0.15), _harmonic(12),
                   Envelope(0.05, 0.1, 0.25, 0.08, 0.8)),
    InstrumentSpec(4, "strings", tuple(round(1.0 / k, 4) for k in range(1, 13)), _harmonic(12),
                   Envelope(0.12, 0.05, 0.25, 0.06, 0.9), vibrato_rate_hz=6.0, vibrato_depth_cents=25.0),
    InstrumentSpec(5, "bell", (1.0, 0.5, 0.8, 0.3, 0.6, 0.4, 0.3), (1.0, 2.0, 2.76, 3.0, 4.07, 5.4, 5.6),
                   Envelope(0.002, 0.45, 0.0, 0.04, 0.0)),
)
N_CLASSES = len(INSTRUMENTS)


def render_tone(spec: InstrumentSpec, note: NoteEvent, sample_rate: int = SAMPLE_RATE,
                phases=None) -> np.ndarray:
    """Additive synthesis of one note, peak-normalised to ``note.velocity``.

    Partials at or above Nyquist are dropped.
    """
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"sample rate must be {SAMPLE_RATE}")
    n = int(round(note.duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = note.frequency
    if spec.vibrato_depth_cents and spec.vibrato_rate_hz:
        ratio = 2.0 ** (spec.vibrato_depth_cents / 1200.0 * np.sin(2 * np.pi * spec.vibrato_rate_hz * t))
        # phase of the fundamental under frequency modulation, starts at 0
        base_phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(f0 * ratio)[:-1]]) / sample_rate
    else:
        base_phase = 2 * np.pi * f0 * t
    if phases is None:
        phases = np.zeros(len(spec.harmonic_amps))
    out = np.zeros(n)
    for amp, r, ph in zip(spec.harmonic_amps, spec.partial_ratios, phases):
        if amp == 0 or f0 * r >= sample_rate / 2:
            continue
        out += amp * np.sin(r * base_phase + ph)
    out *= spec.envelope.render(n, sample_rate)
    peak = np.max(np.abs(out)) if n else 0.0
    if peak == 0 or note.velocity == 0:
        return np.zeros(n)
    return out * (note.velocity / peak)


def humanize(spec: InstrumentSpec, rng: np.random.Generator) -> tuple[InstrumentSpec, np.ndarray]:
    """Per-clip timbre jitter: partial amplitudes scaled by U(0.8, 1.2), random start phases."""
    jitter = rng.uniform(0.8, 1.2, len(spec.harmonic_amps))
    amps = tuple(float(min(a * j, 1.0)) for a, j in zip(spec.harmonic_amps, jitter))
    phases = rng.uniform(0, 2 * np.pi, len(amps))
    return dataclasses.replace(spec, harmonic_amps=amps), phases


def render_clip(instrument: InstrumentSpec, melody: list[NoteEvent], seed: int,
                clip_id: str = "") -> AudioClip:
    if not melody:
        raise ValueError("empty melody")
    rng = np.random.default_rng(seed)
    spec, phases = humanize(instrument, rng)
    out = np.zeros(CLIP_SAMPLES)
    for note in melody:
        if note.onset_s + note.duration_s > CLIP_SECONDS + 1e-9:
            raise ValueError(f"note at {note.onset_s}s overruns the {CLIP_SECONDS}s clip")
        start = int(round(note.onset_s * SAMPLE_RATE))
        tone = render_tone(spec, note, SAMPLE_RATE, phases)
        out[start:start + len(tone)] += tone[:CLIP_SAMPLES - start]
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= CLIP_PEAK / peak
    return AudioClip(out, SAMPLE_RATE, instrument.id, list(melody), clip_id, seed)


def random_melody(rng: np.random.Generator, n_notes: int = 4, note_s: float = 0.5) -> list[NoteEvent]:
    pitches = rng.choice(PENTATONIC, size=n_notes)
    velocities = rng.uniform(0.6, 1.0, size=n_notes)
    return [NoteEvent(int(p), i * note_s, note_s, float(v)) for i, (p, v) in enumerate(zip(pitches, velocities))]


# -- WAV / manifest I/O --------------------------------------------------------

def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono PCM16")
        sr = w.getframerate()
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return pcm.astype(np.float64) / 32767.0, sr


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    label: int
    split: str
    seed: int


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    global_seed: int
    generator_version: str = GENERATOR_VERSION
    root: Path | None = None

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def load_audio(self, entry: ManifestEntry) -> AudioClip:
        samples, sr = read_wav(Path(self.root) / entry.path)
        return AudioClip(samples, sr, entry.label, [], entry.clip_id, entry.seed)

    def save(self, root) -> None:
        root = Path(root)
        with open(root / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as f:
            for e in self.entries:
                f.write(json.dumps(dataclasses.asdict(e), sort_keys=True) + "\n")
        meta = {"global_seed": self.global_seed, "generator_version": self.generator_version,
                "n_clips": len(self.entries)}
        (root / "corpus.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, root) -> "CorpusManifest":
        root = Path(root)
        meta = json.loads((root / "corpus.json").read_text(encoding="utf-8"))
        with open(root / "manifest.jsonl", encoding="utf-8") as f:
            entries = [ManifestEntry(**json.loads(line)) for line in f if line.strip()]
        m = cls(entries, meta["global_seed"], meta["generator_version"], root)
        m.validate()
        return m

    def validate(self) -> None:
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate clip ids in manifest")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"{e.clip_id}: bad split tag {e.split!r}")
            if self.root is not None and not (Path(self.root) / e.path).exists():
                raise FileNotFoundError(f"{e.clip_id}: missing {e.path}")


@dataclass(frozen=True)
class CorpusConfig:
    clips_per_instrument: int = 300
    train_fraction: float = 0.9
    val_fraction: float = 0.1
    eval_fraction: float = 0.0


def _split_counts(n: int, cfg: CorpusConfig) -> tuple[int, int, int]:
    n_val = int(round(n * cfg.val_fraction))
    n_eval = int(round(n * cfg.eval_fraction))
    return n - n_val - n_eval, n_val, n_eval


def clip_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


def make_clip(global_seed: int, label: int, k: int, clips_per_instrument: int) -> AudioClip:
    index = label * clips_per_instrument + k
    seed = clip_seed(global_seed, index)
    rng = np.random.default_rng(seed)
    melody = random_melody(rng)
    spec = INSTRUMENTS[label]
    return render_clip(spec, melody, seed, clip_id=f"{spec.name}_{k:04d}")


def generate_corpus(config: CorpusConfig, global_seed: int, out_dir) -> CorpusManifest:
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    n = config.clips_per_instrument
    n_train, n_val, _ = _split_counts(n, config)
    entries = []
    for label, spec in enumerate(INSTRUMENTS):
        order = np.random.default_rng([global_seed, label, 7]).permutation(n)
        tags = np.empty(n, dtype=object)
        tags[order[:n_train]] = "train"
        tags[order[n_train:n_train + n_val]] = "val"
        tags[order[n_train + n_val:]] = "eval"
        for k in range(n):
            clip = make_clip(global_seed, label, k, n)
            rel = f"clips/{clip.clip_id}.wav"
            write_wav(out_dir / rel, clip.samples)
            entries.append(ManifestEntry(clip.clip_id, rel, label, str(tags[k]), clip.seed))
    manifest = CorpusManifest(entries, global_seed, GENERATOR_VERSION, out_dir)
    manifest.save(out_dir)
    return manifest
