"""Waveform augmentation (distortion and compression) and feature-domain
SpecAugment.

Augmentation runs in two stages. :func:`build_plan` draws every random
parameter up front, so the resulting :class:`AugmentPlan` is a fixed,
serialisable recipe. :func:`execute_plan` then applies exactly one
disturbance per output utterance.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shlex
import shutil
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import audio
from .audio import AudioClip, RoomImpulseResponse
from .errors import (
    BudgetExceedsCandidates,
    DataError,
    EmptyManifest,
    EncoderFailed,
    EncoderNotFound,
    IoFailure,
)
from .features import FeatureMatrix

log = logging.getLogger(__name__)

NOISE_KINDS = ("noise", "music", "babble")
DISTORTION_KINDS = NOISE_KINDS + ("reverb", "volume")
REAL_CODECS = ("mp3", "ogg", "aac", "opus")
CODECS = REAL_CODECS + ("telephony", "surrogate")
DEFAULT_BITRATES = (32, 64, 128)

SURROGATE_CUTOFF_HZ = 3400.0
SURROGATE_TAPS = 129
SURROGATE_LEVELS = 2 ** 10

CODEC_DIR_ENV = "STITCHGUARD_CODEC_DIR"


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    snr_db_range: tuple[float, float] = (0.0, 20.0)
    gain_db_range: tuple[float, float] = (-10.0, 20.0)
    noise_manifest: Path | None = None
    rir_manifest: Path | None = None

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise DataError(f"unknown distortion kind {self.kind!r}")
        for lo, hi in (self.snr_db_range, self.gain_db_range):
            if lo > hi:
                raise DataError(f"unordered range ({lo}, {hi})")
        if self.kind in NOISE_KINDS and self.noise_manifest is None:
            raise EmptyManifest(f"{self.kind} distortion needs a noise manifest")
        if self.kind == "reverb" and self.rir_manifest is None:
            raise EmptyManifest("reverb distortion needs an RIR manifest")

    def corpus(self) -> list[Path]:
        manifest = self.rir_manifest if self.kind == "reverb" else self.noise_manifest
        if manifest is None:
            return []
        paths = audio.read_path_manifest(manifest)
        if not paths:
            raise EmptyManifest(f"{manifest} lists no files")
        return paths


@dataclass(frozen=True)
class CompressionSpec:
    """A codec round trip.

    Command templates are split shell-style and substituted per argument;
    ``{in}``, ``{out}``, ``{bitrate}`` and ``{codec}`` are recognised. When
    ``decoder_command`` is absent the encoder output is read back as WAV.
    """

    codec: str
    encoder_command: str | None = None
    decoder_command: str | None = None
    bitrate_choices: tuple[int, ...] = DEFAULT_BITRATES

    def __post_init__(self):
        if self.codec not in CODECS:
            raise DataError(f"unknown codec {self.codec!r}")
        if self.codec in REAL_CODECS and not self.encoder_command:
            raise DataError(f"codec {self.codec} needs an encoder command")
        if not self.bitrate_choices:
            raise DataError("bitrate_choices is empty")


@dataclass(frozen=True)
class Disturbance:
    """One concrete disturbance with every random parameter already drawn."""

    family: str  # "distortion" or "compression"
    kind: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"family": self.family, "kind": self.kind, **self.params}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Disturbance":
        d = json.loads(text)
        return cls(d.pop("family"), d.pop("kind"), d)


@dataclass(frozen=True)
class PlanEntry:
    out_id: str
    src_id: str
    disturbance: Disturbance


@dataclass
class AugmentPlan:
    entries: list[PlanEntry]
    seed: int

    def __len__(self):
        return len(self.entries)


def _hash_int(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode())
    return int.from_bytes(h.digest()[:8], "little")


def _draw_distortion(spec: DistortionSpec, corpus: list[Path], rng: np.random.Generator) -> Disturbance:
    if spec.kind in NOISE_KINDS:
        return Disturbance("distortion", spec.kind, {
            "snr_db": float(rng.uniform(*spec.snr_db_range)),
            "path": str(corpus[int(rng.integers(len(corpus)))]),
            "noise_seed": int(rng.integers(2 ** 31)),
        })
    if spec.kind == "reverb":
        return Disturbance("distortion", "reverb", {"path": str(corpus[int(rng.integers(len(corpus)))])})
    return Disturbance("distortion", "volume", {"gain_db": float(rng.uniform(*spec.gain_db_range))})


def _draw_compression(spec: CompressionSpec, rng: np.random.Generator) -> Disturbance:
    params = {}
    if spec.codec in REAL_CODECS:
        params["bitrate"] = int(spec.bitrate_choices[int(rng.integers(len(spec.bitrate_choices)))])
    return Disturbance("compression", spec.codec, params)


def build_plan(clean_manifest: Sequence, distortion_specs: Sequence[DistortionSpec],
               compression_specs: Sequence[CompressionSpec], expansion_factor: int = 5,
               distortion_budget: int = 60000, compression_budget: int = 40000,
               seed: int = 0) -> AugmentPlan:
    """Draw candidate disturbances and subsample them to the budgets.

    Each clean utterance gets ``expansion_factor`` candidates per part
    (distortion, compression); ``distortion_budget`` and
    ``compression_budget`` of them are kept, uniformly at random. Every draw
    is keyed on ``(seed, utt_id)`` rather than list position, so reordering
    the manifest yields the same plan.
    """
    utt_ids = [getattr(u, "utt_id", u) for u in clean_manifest]
    if not utt_ids:
        raise EmptyManifest("clean manifest is empty")
    if len(set(utt_ids)) != len(utt_ids):
        raise DataError("clean manifest has duplicate utterance ids")
    if expansion_factor < 1:
        raise DataError("expansion_factor must be >= 1")
    n_candidates = expansion_factor * len(utt_ids)
    entries: list[PlanEntry] = []
    parts = (
        ("d", list(distortion_specs), distortion_budget),
        ("c", list(compression_specs), compression_budget),
    )
    for tag, specs, budget in parts:
        if budget < 0 or budget > n_candidates:
            raise BudgetExceedsCandidates(
                f"budget {budget} exceeds {n_candidates} candidates "
                f"({expansion_factor} x {len(utt_ids)} utterances)")
        if budget == 0:
            continue
        if not specs:
            raise EmptyManifest(f"budget {budget} requested but no {'distortion' if tag == 'd' else 'compression'} specs")
        corpora = [s.corpus() if isinstance(s, DistortionSpec) else None for s in specs]
        candidates = []
        for utt in sorted(utt_ids):
            rng = np.random.default_rng(_hash_int(seed, tag, utt))
            for j in range(expansion_factor):
                k = int(rng.integers(len(specs)))
                if tag == "d":
                    dist = _draw_distortion(specs[k], corpora[k], rng)
                else:
                    dist = _draw_compression(specs[k], rng)
                out_id = f"{utt}__{tag}{j}"
                candidates.append((_hash_int(seed, "pick", out_id), PlanEntry(out_id, utt, dist)))
        candidates.sort(key=lambda c: (c[0], c[1].out_id))
        entries.extend(e for _, e in candidates[:budget])
    entries.sort(key=lambda e: e.out_id)
    return AugmentPlan(entries, seed)


def write_plan(plan: AugmentPlan, path) -> None:
    lines = [f"#seed\t{plan.seed}"]
    lines += [f"{e.out_id}\t{e.src_id}\t{e.disturbance.to_json()}" for e in plan.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_plan(path) -> AugmentPlan:
    seed = 0
    entries = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#seed\t"):
            seed = int(line.split("\t")[1])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        try:
            dist = Disturbance.from_json(parts[2])
        except (ValueError, KeyError) as exc:
            raise DataError(f"{path}:{lineno}: bad disturbance json") from exc
        entries.append(PlanEntry(parts[0], parts[1], dist))
    return AugmentPlan(entries, seed)


def _match_rate(clip: AudioClip, rate: int) -> AudioClip:
    return clip if clip.sample_rate == rate else audio.resample(clip, rate)


def apply_distortion(clip: AudioClip, dist: Disturbance, rng: np.random.Generator | None = None,
                     loader: Callable[[Path], AudioClip] = audio.read_wav) -> AudioClip:
    """Apply a concrete distortion. ``rng`` drives the noise crop offset and
    defaults to one seeded from the disturbance itself."""
    p = dist.params
    if dist.kind in NOISE_KINDS:
        noise = _match_rate(loader(Path(p["path"])), clip.sample_rate)
        if rng is None:
            rng = np.random.default_rng(p.get("noise_seed", 0))
        return audio.mix_at_snr(clip, noise, p["snr_db"], rng)
    if dist.kind == "reverb":
        r = _match_rate(loader(Path(p["path"])), clip.sample_rate)
        return audio.convolve_rir(clip, RoomImpulseResponse(r.samples, r.sample_rate))
    if dist.kind == "volume":
        return audio.apply_gain(clip, p["gain_db"])
    raise DataError(f"not a distortion: {dist.kind!r}")


def _lowpass_kernel(cutoff_hz: float, sample_rate: int, taps: int = SURROGATE_TAPS) -> np.ndarray:
    fc = cutoff_hz / sample_rate
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.kaiser(taps, audio.KAISER_BETA)
    return h / h.sum()


def surrogate_codec(clip: AudioClip) -> AudioClip:
    """Deterministic stand-in for a lossy codec: band-limit to telephone
    bandwidth, then requantise to 10-bit amplitude."""
    from scipy.signal import fftconvolve

    h = _lowpass_kernel(SURROGATE_CUTOFF_HZ, clip.sample_rate)
    y = fftconvolve(clip.samples, h, mode="same")
    half = SURROGATE_LEVELS // 2
    q = np.clip(np.round(y * half), -half, half - 1) / half
    return AudioClip(q, clip.sample_rate)


def telephony(clip: AudioClip, narrow_rate: int = 8000) -> AudioClip:
    return audio.resample(audio.resample(clip, narrow_rate), clip.sample_rate)


def _resolve_command(template: str, substitutions: Mapping[str, str]) -> list[str]:
    argv = []
    for arg in shlex.split(template):
        for key, value in substitutions.items():
            arg = arg.replace("{" + key + "}", value)
        argv.append(arg)
    if not argv:
        raise EncoderNotFound("empty codec command")
    exe = argv[0]
    codec_dir = os.environ.get(CODEC_DIR_ENV)
    if codec_dir and not os.path.isabs(exe):
        exe = os.path.join(codec_dir, exe)
    resolved = shutil.which(exe)
    if resolved is None:
        raise EncoderNotFound(f"codec executable not found: {exe}")
    argv[0] = resolved
    return argv


def _run(argv: list[str]) -> None:
    try:
        proc = subprocess.run(argv, capture_output=True, check=False)
    except OSError as exc:
        raise EncoderNotFound(f"{argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode(errors="replace").strip()[-500:]
        raise EncoderFailed(f"{Path(argv[0]).name} exited with {proc.returncode}: {tail}")


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - len(x))])


def apply_compression(clip: AudioClip, spec: CompressionSpec, workdir=None,
                      bitrate: int | None = None) -> AudioClip:
    """Round-trip ``clip`` through a codec; output length matches the input."""
    if spec.codec == "telephony":
        out = telephony(clip)
    elif spec.codec == "surrogate":
        out = surrogate_codec(clip)
    else:
        bitrate = bitrate if bitrate is not None else spec.bitrate_choices[0]
        with tempfile.TemporaryDirectory(dir=workdir) as tmp:
            tmp = Path(tmp)
            src, enc, dec = tmp / "in.wav", tmp / f"enc.{spec.codec}", tmp / "dec.wav"
            audio.write_wav(clip, src)
            subs = {"in": str(src), "out": str(enc), "bitrate": str(bitrate), "codec": spec.codec}
            _run(_resolve_command(spec.encoder_command, subs))
            if spec.decoder_command:
                subs = {"in": str(enc), "out": str(dec), "bitrate": str(bitrate), "codec": spec.codec}
                _run(_resolve_command(spec.decoder_command, subs))
            else:
                dec = enc
            if not dec.exists():
                raise EncoderFailed(f"codec produced no output at {dec}")
            out = _match_rate(audio.read_wav(dec), clip.sample_rate)
    samples = np.clip(_fit_length(out.samples, len(clip)), -1.0, 1.0)
    return AudioClip(samples, clip.sample_rate)


def apply_disturbance(clip: AudioClip, dist: Disturbance,
                      compression_specs: Mapping[str, CompressionSpec] | None = None,
                      workdir=None) -> AudioClip:
    if dist.family == "distortion":
        return apply_distortion(clip, dist)
    specs = compression_specs or {}
    spec = specs.get(dist.kind)
    if spec is None:
        if dist.kind in REAL_CODECS:
            raise EncoderNotFound(f"no encoder command configured for {dist.kind}")
        spec = CompressionSpec(dist.kind)
    return apply_compression(clip, spec, workdir, dist.params.get("bitrate"))


def execute_plan(plan: AugmentPlan, sources: Mapping[str, Path], out_dir,
                 compression_specs: Mapping[str, CompressionSpec] | None = None,
                 workers: int = 1) -> dict[str, Path]:
    """Render every plan entry to ``out_dir/<out_id>.wav``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    missing = {e.src_id for e in plan.entries} - set(sources)
    if missing:
        raise DataError(f"plan references unknown source ids: {sorted(missing)[:5]}")

    def run(entry: PlanEntry) -> tuple[str, Path]:
        clip = audio.read_wav(sources[entry.src_id])
        out = apply_disturbance(clip, entry.disturbance, compression_specs, workdir=out_dir)
        path = out_dir / f"{entry.out_id}.wav"
        audio.write_wav(out, path)
        return entry.out_id, path

    if workers <= 1:
        results = [run(e) for e in plan.entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, plan.entries))
    log.info("rendered %d augmented utterances into %s", len(results), out_dir)
    return dict(results)


# --- SpecAugment -----------------------------------------------------------

@dataclass(frozen=True)
class SpecAugmentConfig:
    f_pct: float = 10.0
    t_pct: float = 10.0
    rows: int = 1
    cols: int = 1
    fill_value: float = 0.0

    def __post_init__(self):
        if not (0 <= self.f_pct <= 100 and 0 <= self.t_pct <= 100):
            raise DataError("SpecAugment percentages must lie in [0, 100]")
        if self.rows < 0 or self.cols < 0:
            raise DataError("SpecAugment mask counts must be >= 0")


def max_mask_width(pct: float, size: int) -> int:
    # tolerance absorbs binary rounding such as 0.29 * 100 = 28.999...
    return int(math.floor(pct * size / 100.0 + 1e-9))


def draw_masks(n_frames: int, dim: int, cfg: SpecAugmentConfig,
               rng: np.random.Generator) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Return ``(freq_masks, time_masks)`` as ``(start, width)`` pairs."""

    def draw(count_max, pct, size):
        masks = []
        wmax = max_mask_width(pct, size)
        for _ in range(int(rng.integers(0, count_max + 1))):
            width = int(rng.integers(0, wmax + 1))
            start = int(rng.integers(0, size - width + 1))
            masks.append((start, width))
        return masks

    return draw(cfg.rows, cfg.f_pct, dim), draw(cfg.cols, cfg.t_pct, n_frames)


def spec_augment_array(values: np.ndarray, cfg: SpecAugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = values.copy()
    fmasks, tmasks = draw_masks(values.shape[0], values.shape[1], cfg, rng)
    for start, width in fmasks:
        out[:, start:start + width] = cfg.fill_value
    for start, width in tmasks:
        out[start:start + width, :] = cfg.fill_value
    return out


def spec_augment(features: FeatureMatrix, cfg: SpecAugmentConfig, rng: np.random.Generator) -> FeatureMatrix:
    """Mask random frequency-bin and time-frame stripes with ``cfg.fill_value``."""
    return FeatureMatrix(spec_augment_array(features.values, cfg, rng), features.config)
