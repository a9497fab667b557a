"""Sample-domain audio primitives: WAV I/O, resampling, gain, SNR mixing
and reverberation.

All functions are pure; randomness (noise crop offsets) comes from an
explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    EmptyRir,
    IoFailure,
    UnsupportedFormat,
    ZeroPowerNoise,
    ZeroPowerSpeech,
)

RESAMPLE_TAPS = 64
KAISER_BETA = 8.0


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono PCM audio with amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise UnsupportedFormat(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class RoomImpulseResponse:
    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64).ravel()
        if taps.size == 0 or not np.any(taps):
            raise EmptyRir("room impulse response has no nonzero taps")
        object.__setattr__(self, "taps", taps)


def read_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM RIFF/WAVE file."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            if channels != 1:
                raise UnsupportedFormat(f"{path}: {channels} channels, only mono is supported")
            if width != 2:
                raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
            if rate <= 0:
                raise CorruptHeader(f"{path}: invalid sample rate {rate}")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise CorruptHeader(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise CorruptHeader(f"{path}: truncated header") from exc
    except FileNotFoundError as exc:
        raise IoFailure(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(raw) % 2:
        raw = raw[:-1]
    ints = np.frombuffer(raw, dtype="<i2")
    return AudioClip(ints.astype(np.float64) / 32768.0, rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as 16-bit PCM; positive full scale saturates at 32767."""
    ints = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    try:
        with open(path, "wb") as fh, wave.open(fh, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(int(clip.sample_rate))
            wf.writeframes(ints.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _kaiser(x: np.ndarray, half_width: float, beta: float = KAISER_BETA) -> np.ndarray:
    r = np.clip(x / half_width, -1.0, 1.0)
    return np.i0(beta * np.sqrt(1.0 - r * r)) / np.i0(beta)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling with a 64-tap Kaiser-windowed sinc kernel.

    The kernel is evaluated at the fractional position of every output
    sample (a polyphase filter without the precomputed table) and its taps
    are normalised to unit sum, so DC passes exactly away from the edges.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src = clip.sample_rate
    if target_rate == src:
        return AudioClip(clip.samples.copy(), src)
    x = clip.samples
    n_out = int(round(len(x) * target_rate / src))
    if n_out == 0 or len(x) == 0:
        return AudioClip(np.zeros(n_out), target_rate)
    # cutoff relative to the input Nyquist; shrink it when decimating
    cutoff = min(1.0, target_rate / src)
    half = RESAMPLE_TAPS // 2
    t = np.arange(n_out) * (src / target_rate)
    base = np.floor(t).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1)
    idx = base[:, None] + offsets[None, :]
    dist = t[:, None] - idx
    kernel = cutoff * np.sinc(cutoff * dist) * _kaiser(dist, float(half))
    kernel /= kernel.sum(axis=1, keepdims=True)
    valid = (idx >= 0) & (idx < len(x))
    gathered = np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0)
    return AudioClip(np.sum(gathered * kernel, axis=1), target_rate)


def apply_gain(clip: AudioClip, gain_db: float) -> AudioClip:
    factor = 10.0 ** (gain_db / 20.0)
    return AudioClip(np.clip(clip.samples * factor, -1.0, 1.0), clip.sample_rate)


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if len(x) else 0.0


def fit_noise_length(noise: np.ndarray, length: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Tile short noise; crop long noise at a random offset."""
    if len(noise) == length:
        return noise
    if len(noise) < length:
        reps = math.ceil(length / len(noise))
        return np.tile(noise, reps)[:length]
    rng = rng if rng is not None else np.random.default_rng(0)
    start = int(rng.integers(0, len(noise) - length + 1))
    return noise[start:start + length]


def noise_scale_for_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Return the factor that puts ``noise`` at ``snr_db`` below ``speech``."""
    p_speech = mean_power(speech)
    p_noise = mean_power(noise)
    if p_noise == 0.0:
        raise ZeroPowerNoise("noise clip has zero power")
    if p_speech == 0.0:
        raise ZeroPowerSpeech("speech clip has zero power")
    return math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(speech: AudioClip, noise: AudioClip, snr_db: float,
               rng: np.random.Generator | None = None) -> AudioClip:
    """Add ``noise`` to ``speech`` at the requested whole-clip SNR, then clip."""
    if noise.sample_rate != speech.sample_rate:
        raise ValueError(
            f"sample rate mismatch: speech {speech.sample_rate} Hz, noise {noise.sample_rate} Hz")
    if len(noise) == 0 or not np.any(noise.samples):
        raise ZeroPowerNoise("noise clip has zero power")
    n = fit_noise_length(noise.samples, len(speech), rng)
    scale = noise_scale_for_snr(speech.samples, n, snr_db)
    mixed = speech.samples + scale * n
    return AudioClip(np.clip(mixed, -1.0, 1.0), speech.sample_rate)


def convolve_rir(clip: AudioClip, rir: RoomImpulseResponse) -> AudioClip:
    """Reverberate ``clip``: full convolution truncated to the input length,
    rescaled so the output peak equals the input peak."""
    if rir.sample_rate != clip.sample_rate:
        raise ValueError(
            f"sample rate mismatch: clip {clip.sample_rate} Hz, RIR {rir.sample_rate} Hz")
    x = clip.samples
    if len(x) == 0:
        return AudioClip(x.copy(), clip.sample_rate)
    if np.count_nonzero(rir.taps) == 1:
        # pure delay/scale; skip FFT rounding so a delta is an exact identity
        k = int(np.flatnonzero(rir.taps)[0])
        y = np.zeros_like(x)
        if k < len(x):
            y[k:] = x[:len(x) - k] * rir.taps[k]
    else:
        from scipy.signal import fftconvolve

        y = fftconvolve(x, rir.taps)[: len(x)]
    peak_in = np.max(np.abs(x))
    peak_out = np.max(np.abs(y))
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return AudioClip(np.clip(y, -1.0, 1.0), clip.sample_rate)


def read_path_manifest(path) -> list[Path]:
    """Read a one-path-per-line manifest; ``#`` starts a comment.

    Relative entries resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    out = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else path.parent / p)
    return out
