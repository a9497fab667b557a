"""STFT feature frontends: LFCC, LLFB and DCT-DFT spectra.

Framing is 25 ms Hamming windows with a 10 ms hop unless configured
otherwise. Only static coefficients are produced.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import AudioClip
from .errors import ClipTooShort, CorruptHeader, InvalidFeatureConfig, IoFailure, VersionMismatch

FEATURE_MAGIC = b"SGFT"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")


class FeatureKind(str, Enum):
    LFCC = "lfcc"
    LLFB = "llfb"
    DCT_DFT_SPEC = "dctdft"


@dataclass(frozen=True)
class FeatureConfig:
    kind: FeatureKind = FeatureKind.LFCC
    dim: int | None = 80
    nfft: int = 1024
    win_ms: float = 25.0
    hop_ms: float = 10.0
    sample_rate: int = 16000
    n_filters: int | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        n_bins = self.nfft // 2 + 1
        if self.kind is FeatureKind.DCT_DFT_SPEC:
            if self.dim is None:
                object.__setattr__(self, "dim", n_bins)
        elif self.dim is None:
            raise InvalidFeatureConfig(f"{self.kind.value} requires dim")
        if self.n_filters is None and self.kind is not FeatureKind.DCT_DFT_SPEC:
            object.__setattr__(self, "n_filters", self.dim)
        self.validate()

    @property
    def win_samples(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.nfft // 2 + 1

    def validate(self) -> None:
        if self.dim is None or self.dim < 1 or self.nfft < 1 or self.sample_rate <= 0:
            raise InvalidFeatureConfig(f"non-positive size in {self}")
        if self.win_ms < self.hop_ms or self.hop_samples < 1:
            raise InvalidFeatureConfig("window must be at least one hop long")
        if self.nfft < self.win_samples:
            raise InvalidFeatureConfig(
                f"nfft {self.nfft} shorter than window of {self.win_samples} samples")
        if not self.log_floor > 0:
            raise InvalidFeatureConfig("log_floor must be positive")
        if self.kind is FeatureKind.LFCC and not 1 <= self.dim <= self.n_filters:
            raise InvalidFeatureConfig("LFCC needs dim <= n_filters")
        if self.kind is FeatureKind.LLFB and self.dim != self.n_filters:
            raise InvalidFeatureConfig("LLFB needs dim == n_filters")
        if self.kind is FeatureKind.DCT_DFT_SPEC and self.dim > self.n_bins:
            raise InvalidFeatureConfig("DCT-DFT spec needs dim <= nfft/2 + 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass(frozen=True, eq=False)
class Spectrogram:
    values: np.ndarray  # frames x (nfft/2 + 1)
    frame_hop_ms: float


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # frames x dim
    config: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def frame_count(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def stft_magnitude(clip: AudioClip, cfg: FeatureConfig) -> Spectrogram:
    win, hop = cfg.win_samples, cfg.hop_samples
    x = clip.samples
    n_frames = frame_count(len(x), win, hop)
    if n_frames < 1:
        raise ClipTooShort(f"clip of {len(x)} samples is shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n=cfg.nfft, axis=1))
    return Spectrogram(spec, cfg.hop_ms)


@lru_cache(maxsize=32)
def _filterbank(n_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    nyquist = sample_rate / 2.0
    edges = np.linspace(0.0, nyquist, n_filters + 2)
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((n_filters, nfft // 2 + 1))
    for j in range(n_filters):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[j] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    fb.setflags(write=False)
    return fb


def linear_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular filters with peaks equally spaced on a linear Hz axis.

    Returns an ``n_filters x (nfft/2 + 1)`` read-only matrix.
    """
    if not cfg.n_filters or cfg.n_filters < 1:
        raise InvalidFeatureConfig("n_filters must be >= 1")
    return _filterbank(cfg.n_filters, cfg.nfft, cfg.sample_rate)


@lru_cache(maxsize=32)
def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis, ``n_out`` rows over ``n_in`` inputs."""
    if not 1 <= n_out <= n_in:
        raise InvalidFeatureConfig(f"DCT needs 1 <= n_out <= n_in, got {n_out}, {n_in}")
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    d = np.sqrt(2.0 / n_in) * np.cos(np.pi * (n + 0.5) * k / n_in)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def extract(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    if clip.sample_rate != cfg.sample_rate:
        raise InvalidFeatureConfig(
            f"clip is {clip.sample_rate} Hz but features expect {cfg.sample_rate} Hz; resample first")
    mag = stft_magnitude(clip, cfg).values
    if cfg.kind is FeatureKind.DCT_DFT_SPEC:
        logspec = np.log(np.maximum(mag, cfg.log_floor))
        values = logspec @ dct_matrix(cfg.n_bins, cfg.dim).T
    else:
        energies = np.square(mag) @ linear_filterbank(cfg).T
        values = np.log(np.maximum(energies, cfg.log_floor))
        if cfg.kind is FeatureKind.LFCC:
            values = values @ dct_matrix(cfg.n_filters, cfg.dim).T
    return FeatureMatrix(values, cfg)


def mean_normalize(features: FeatureMatrix) -> FeatureMatrix:
    v = features.values
    return replace(features, values=v - v.mean(axis=0, keepdims=True))


def write_features(features: FeatureMatrix, path) -> None:
    """Write ``<utt_id>.feat``: 16-byte header then row-major float32 LE."""
    values = np.ascontiguousarray(features.values, dtype="<f4")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, *values.shape)
    try:
        Path(path).write_bytes(header + values.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_features(path, config: FeatureConfig | None = None) -> FeatureMatrix:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(blob) < _FEATURE_HEADER.size:
        raise CorruptHeader(f"{path}: truncated feature header")
    magic, version, frames, dim = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise CorruptHeader(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionMismatch(f"{path}: feature file version {version}")
    body = blob[_FEATURE_HEADER.size:]
    if len(body) != 4 * frames * dim:
        raise CorruptHeader(f"{path}: expected {frames}x{dim} floats, got {len(body)} bytes")
    values = np.frombuffer(body, dtype="<f4").reshape(frames, dim).astype(np.float64)
    return FeatureMatrix(values, config if config is not None else FeatureConfig(dim=dim, n_filters=dim))
