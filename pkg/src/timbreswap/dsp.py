"""STFT, log-mel patches, chromagrams and Griffin-Lim on 8 kHz clips."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .synthcorpus import CLIP_SAMPLES, SAMPLE_RATE, AudioClip

N_FFT = 512
HOP = 256
N_BINS = N_FFT // 2 + 1
N_MELS = 32
PATCH_FRAMES = 32
LOG_FLOOR = 1e-5
CHROMA_FMIN = 30.0

WINDOW = get_window("hann", N_FFT).astype(np.float64)
BIN_FREQS = np.arange(N_BINS) * SAMPLE_RATE / N_FFT


@dataclass
class Spectrogram:
    magnitudes: np.ndarray  # frames x 257
    sample_rate: int = SAMPLE_RATE
    n_samples: int = CLIP_SAMPLES

    @property
    def power(self) -> np.ndarray:
        return self.magnitudes ** 2


@dataclass(frozen=True)
class MelStats:
    mean: float
    std: float


@dataclass
class MelPatch:
    values: np.ndarray  # 32 mel bands x 32 frames
    stats: MelStats | None = None


@dataclass
class Chromagram:
    values: np.ndarray  # frames x 12


class StatsNotFitted(RuntimeError):
    pass


# -- STFT ---------------------------------------------------------------------

def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, N_FFT // 2, mode="reflect")


def _frames(x_padded: np.ndarray) -> np.ndarray:
    n_frames = 1 + (len(x_padded) - N_FFT) // HOP
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n_frames)[:, None]
    return x_padded[idx]


def _complex_stft(x_padded: np.ndarray) -> np.ndarray:
    return np.fft.rfft(_frames(x_padded) * WINDOW, axis=1)


def _istft_ls(spec: np.ndarray, n_padded: int) -> np.ndarray:
    """Least-squares inverse (windowed overlap-add divided by summed squared window)."""
    frames = np.fft.irfft(spec, n=N_FFT, axis=1) * WINDOW
    out = np.zeros(n_padded)
    norm = np.zeros(n_padded)
    for m, fr in enumerate(frames):
        out[m * HOP:m * HOP + N_FFT] += fr
        norm[m * HOP:m * HOP + N_FFT] += WINDOW ** 2
    return out / np.maximum(norm, 1e-8)


def stft(clip: AudioClip | np.ndarray) -> Spectrogram:
    x = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    if len(x) < N_FFT:
        raise ValueError(f"signal shorter than the {N_FFT}-sample window")
    return Spectrogram(np.abs(_complex_stft(_pad(x))), SAMPLE_RATE, len(x))


# -- mel ----------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Unnormalised triangular filters (peak 1), shape (n_mels, 257).

    Neighbouring triangles cross at half height so the weights partition unity
    between the first and last centre frequency.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, N_BINS))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (BIN_FREQS - lo) / (mid - lo)
        down = (hi - BIN_FREQS) / (hi - mid)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


FILTERBANK = mel_filterbank()
FILTERBANK_PINV = np.linalg.pinv(FILTERBANK)


def resample_time(x: np.ndarray, n_out: int) -> np.ndarray:
    """Linear interpolation along the last axis with endpoints aligned."""
    n_in = x.shape[-1]
    if n_in == n_out:
        return x.copy()
    pos = np.linspace(0.0, n_in - 1, n_out)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return x[..., lo] * (1 - frac) + x[..., hi] * frac


def log_mel_raw(spec: Spectrogram, filterbank: np.ndarray = FILTERBANK) -> np.ndarray:
    """Un-normalised log-mel image, 32 bands x 32 frames."""
    mel = filterbank @ spec.power.T  # bands x frames
    return resample_time(np.log(mel + LOG_FLOOR), PATCH_FRAMES)


def fit_mel_stats(raw_patches) -> MelStats:
    arr = np.asarray(raw_patches, dtype=np.float64)
    return MelStats(float(arr.mean()), float(arr.std()))


def log_mel(spec: Spectrogram, filterbank: np.ndarray = FILTERBANK, stats: MelStats | None = None) -> MelPatch:
    if stats is None:
        raise StatsNotFitted("log-mel normalisation stats have not been fitted")
    raw = log_mel_raw(spec, filterbank)
    return MelPatch((raw - stats.mean) / stats.std, stats)


def patch_to_spectrogram(patch: MelPatch, stats: MelStats | None = None, n_frames: int | None = None) -> Spectrogram:
    """Approximate linear magnitudes from a mel patch via the filterbank pseudo-inverse."""
    stats = stats or patch.stats
    if stats is None:
        raise StatsNotFitted("patch carries no normalisation stats")
    n_frames = n_frames or 1 + CLIP_SAMPLES // HOP
    mel_power = np.clip(np.exp(patch.values * stats.std + stats.mean) - LOG_FLOOR, 0.0, None)
    power = np.clip(FILTERBANK_PINV @ resample_time(mel_power, n_frames), 0.0, None)
    n_samples = CLIP_SAMPLES if n_frames == 1 + CLIP_SAMPLES // HOP else (n_frames - 1) * HOP
    return Spectrogram(np.sqrt(power).T, SAMPLE_RATE, n_samples)


# -- chroma -------------------------------------------------------------------

def _pitch_classes() -> np.ndarray:
    pc = np.full(N_BINS, -1)
    ok = BIN_FREQS >= CHROMA_FMIN
    pc[ok] = (np.round(12 * np.log2(BIN_FREQS[ok] / 440.0)).astype(int) + 9) % 12
    return pc


BIN_PITCH_CLASS = _pitch_classes()


def chromagram(spec: Spectrogram) -> Chromagram:
    """Pitch-class energy per frame (class 0 = C, 9 = A), rows L2-normalised."""
    power = spec.power
    chroma = np.zeros((power.shape[0], 12))
    for pc in range(12):
        chroma[:, pc] = power[:, BIN_PITCH_CLASS == pc].sum(axis=1)
    norms = np.linalg.norm(chroma, axis=1, keepdims=True)
    chroma = np.divide(chroma, norms, out=np.zeros_like(chroma), where=norms > 0)
    return Chromagram(chroma)


# -- Griffin-Lim --------------------------------------------------------------

def spectral_convergence(target: np.ndarray, estimate: np.ndarray) -> float:
    denom = np.linalg.norm(target)
    return float(np.linalg.norm(estimate - target) / denom) if denom > 0 else 0.0


def griffin_lim(source, iterations: int = 32, seed: int = 0, stats: MelStats | None = None,
                return_history: bool = False):
    """Phase reconstruction by alternating projections.

    ``source`` is a Spectrogram or a MelPatch (mapped through the filterbank
    pseudo-inverse first). The projections run on the padded signal, so the
    spectral-convergence history is non-increasing.
    """
    if iterations < 1:
        raise ValueError("griffin_lim needs at least one iteration")
    spec = patch_to_spectrogram(source, stats) if isinstance(source, MelPatch) else source
    mags = np.asarray(spec.magnitudes, dtype=np.float64)
    n_padded = (mags.shape[0] - 1) * HOP + N_FFT
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mags.shape))
    x = _istft_ls(mags * phase, n_padded)
    history = []
    for _ in range(iterations):
        rebuilt = _complex_stft(x)
        history.append(spectral_convergence(mags, np.abs(rebuilt)))
        phase = np.exp(1j * np.angle(rebuilt))
        x = _istft_ls(mags * phase, n_padded)
    history.append(spectral_convergence(mags, np.abs(_complex_stft(x))))
    out = x[N_FFT // 2:N_FFT // 2 + spec.n_samples]
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 1.0:
        out = out / peak
    clip = AudioClip(out, SAMPLE_RATE)
    return (clip, history) if return_history else clip


# -- image export -------------------------------------------------------------

def export_png(values: np.ndarray, path, db_scale: bool = True, meta: dict | None = None) -> None:
    """8-bit grayscale PNG, low frequencies at the bottom, with a sidecar JSON of the value range.

    ``values`` is (bins x frames). Magnitudes are converted to dB when ``db_scale``.
    """
    from PIL import Image

    v = np.asarray(values, dtype=np.float64)
    if db_scale:
        v = 20 * np.log10(np.maximum(v, 1e-6))
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    img = np.round(scaled[::-1] * 255).astype(np.uint8)
    path = Path(path)
    Image.fromarray(img).save(path)  # 2-D uint8 -> mode "L"
    side = {"min": lo, "max": hi, "units": "dB" if db_scale else "value", "origin": "lower",
            "shape": list(v.shape)}
    side.update(meta or {})
    path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n", encoding="utf-8")
