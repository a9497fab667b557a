"""Synthetic separable corpus: band-limited noise stands in for bona fide
speech and pure tones for fake audio."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioClip, write_wav
from .metrics import BONAFIDE, FAKE
from .pipeline import ManifestEntry, write_manifest


def band_noise(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    lo = rng.uniform(200.0, 1500.0)
    hi = lo + rng.uniform(1000.0, 4000.0)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(f < lo) | (f > hi)] = 0
    x = np.fft.irfft(spec, n)
    return x / np.max(np.abs(x)) * rng.uniform(0.2, 0.8)


def tone(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    freq = rng.uniform(200.0, 4000.0)
    phase = rng.uniform(0, 2 * np.pi)
    return rng.uniform(0.2, 0.8) * np.sin(2 * np.pi * freq * np.arange(n) / sr + phase)


def make_corpus(n: int, seed: int, seconds: float = 1.0, sr: int = 16000,
                prefix: str = "utt") -> list[tuple[str, AudioClip, str]]:
    """``n`` clips, alternating bona fide and fake, as ``(utt_id, clip, label)``."""
    rng = np.random.default_rng(seed)
    length = int(seconds * sr)
    out = []
    for i in range(n):
        if i % 2 == 0:
            out.append((f"{prefix}{i:03d}", AudioClip(band_noise(rng, length, sr), sr), BONAFIDE))
        else:
            out.append((f"{prefix}{i:03d}", AudioClip(tone(rng, length, sr), sr), FAKE))
    return out


def write_corpus(corpus, directory) -> Path:
    """Write WAVs plus ``manifest.tsv`` into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for utt, clip, label in corpus:
        path = directory / f"{utt}.wav"
        write_wav(clip, path)
        entries.append(ManifestEntry(utt, Path(path.name), label))
    manifest = directory / "manifest.tsv"
    write_manifest(entries, manifest)
    return manifest
