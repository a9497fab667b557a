"""Manifests, chunking, training, fine-tuning and utterance scoring."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import audio, features as feat
from .augment import SpecAugmentConfig, spec_augment_array
from .errors import (
    CountTooLarge,
    DataError,
    EmptyFeatures,
    EmptyManifest,
    InvalidConfig,
    IoFailure,
    SingleClassManifest,
    SingleClassInput,
)
from .features import FeatureConfig, FeatureMatrix
from .metrics import BONAFIDE, FAKE, LABELS, ScoreRecord, compute_eer
from .model import NORMAL, Model
from .nn.losses import FocalLossConfig, focal_loss
from .nn.optim import OptimizerConfig, optimizer_step

log = logging.getLogger(__name__)

PAD_POLICIES = ("repeat", "zero", "drop_short")
AGGREGATIONS = ("mean", "max", "logit_mean")

FINETUNE_OVERLAP = 0.7
FINETUNE_LR_FACTOR = 0.01


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: Path
    label: str

    @property
    def target(self) -> int:
        return LABELS.index(self.label)


def read_manifest(path) -> list[ManifestEntry]:
    """Read ``utt_id<TAB>path<TAB>label``; relative paths resolve against
    the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    entries, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected utt_id<TAB>path<TAB>label")
        utt, p, label = (s.strip() for s in parts)
        if label not in LABELS:
            raise DataError(f"{path}:{lineno}: label must be bonafide or fake, got {label!r}")
        if utt in seen:
            raise DataError(f"{path}:{lineno}: duplicate utt_id {utt}")
        seen.add(utt)
        p = Path(p)
        entries.append(ManifestEntry(utt, p if p.is_absolute() else path.parent / p, label))
    if not entries:
        raise EmptyManifest(f"{path}: no entries")
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    Path(path).write_text("".join(f"{e.utt_id}\t{e.path}\t{e.label}\n" for e in entries))


# -- chunking ---------------------------------------------------------------

@dataclass(frozen=True)
class ChunkSpec:
    chunk_ms: int = 600
    overlap_ratio: float = 0.5
    pad_policy: str = "repeat"

    def __post_init__(self):
        if self.chunk_ms <= 0:
            raise InvalidConfig("chunk_ms must be positive")
        if not 0 <= self.overlap_ratio < 1:
            raise InvalidConfig("overlap_ratio must lie in [0, 1)")
        if self.pad_policy not in PAD_POLICIES:
            raise InvalidConfig(f"pad_policy must be one of {PAD_POLICIES}")

    def frames(self, hop_ms: float) -> int:
        n = self.chunk_ms / hop_ms
        if abs(n - round(n)) > 1e-9:
            raise InvalidConfig(f"chunk of {self.chunk_ms} ms is not a whole number of {hop_ms} ms hops")
        return int(round(n))

    def hop(self, length: int) -> int:
        # round half up
        return max(1, int(math.floor(length * (1.0 - self.overlap_ratio) + 0.5)))


def chunk_starts(n_frames: int, length: int, hop: int) -> list[int]:
    """Window starts 0, hop, 2*hop, ...; a final window is anchored at
    ``n_frames - length`` when the regular grid leaves a tail uncovered."""
    if n_frames < length:
        return []
    starts = list(range(0, n_frames - length + 1, hop))
    if starts[-1] + length < n_frames:
        starts.append(n_frames - length)
    return starts


def segment(features: FeatureMatrix | np.ndarray, spec: ChunkSpec, hop_ms: float | None = None) -> list[np.ndarray]:
    """Cut a ``frames x dim`` matrix into fixed-length overlapping chunks."""
    if isinstance(features, FeatureMatrix):
        hop_ms = features.config.hop_ms if hop_ms is None else hop_ms
        values = features.values
    else:
        values = np.asarray(features)
        hop_ms = 10.0 if hop_ms is None else hop_ms
    if values.ndim != 2 or values.shape[0] == 0:
        raise EmptyFeatures("cannot segment an empty feature matrix")
    length = spec.frames(hop_ms)
    n = values.shape[0]
    if n < length:
        if spec.pad_policy == "drop_short":
            return []
        if spec.pad_policy == "repeat":
            reps = math.ceil(length / n)
            return [np.tile(values, (reps, 1))[:length]]
        padded = np.zeros((length, values.shape[1]), dtype=values.dtype)
        padded[:n] = values
        return [padded]
    return [values[s:s + length] for s in chunk_starts(n, length, spec.hop(length))]


@dataclass(frozen=True, eq=False)
class Segment:
    utt_id: str
    index: int
    values: np.ndarray
    label: int

    @property
    def seg_id(self) -> str:
        return f"{self.utt_id}#{self.index}"


@dataclass(frozen=True, eq=False)
class LabeledFeatures:
    utt_id: str
    features: FeatureMatrix
    label: str


def build_segments(utterances: Sequence[LabeledFeatures], spec: ChunkSpec) -> list[Segment]:
    segs = []
    for u in utterances:
        for i, chunk in enumerate(segment(u.features, spec)):
            segs.append(Segment(u.utt_id, i, chunk, LABELS.index(u.label)))
    return segs


def make_splits(segments: Sequence, validation_count: int, seed: int = 0,
                strict: bool = False) -> tuple[list, list]:
    """Random train/validation split at segment level.

    With ``strict`` whole utterances go to validation until at least
    ``validation_count`` segments are held out, so no utterance straddles
    the split.
    """
    n = len(segments)
    if validation_count < 0 or (validation_count >= n and validation_count > 0):
        raise CountTooLarge(f"validation_count {validation_count} must be < {n} segments")
    if validation_count == 0:
        return list(segments), []
    rng = np.random.default_rng(seed)
    if not strict:
        chosen = set(rng.choice(n, size=validation_count, replace=False).tolist())
    else:
        utts = sorted({s.utt_id for s in segments})
        order = rng.permutation(len(utts))
        held, chosen = set(), set()
        for i in order:
            if len(chosen) >= validation_count:
                break
            held.add(utts[i])
            chosen = {k for k, s in enumerate(segments) if s.utt_id in held}
        if len(chosen) >= n:
            raise CountTooLarge("strict split would leave no training segments")
    train = [s for k, s in enumerate(segments) if k not in chosen]
    val = [s for k, s in enumerate(segments) if k in chosen]
    return train, val


# -- features for a manifest ------------------------------------------------

def utterance_features(clip: audio.AudioClip, cfg: FeatureConfig, normalize: bool = True) -> FeatureMatrix:
    if clip.sample_rate != cfg.sample_rate:
        clip = audio.resample(clip, cfg.sample_rate)
    fm = feat.extract(clip, cfg)
    return feat.mean_normalize(fm) if normalize else fm


def load_features(manifest: Sequence[ManifestEntry], cfg: FeatureConfig, features_dir=None,
                  normalize: bool = True) -> list[LabeledFeatures]:
    """Features for every manifest entry: ``<features_dir>/<utt_id>.feat``
    when present, otherwise extracted from the audio."""
    out = []
    for e in manifest:
        cached = Path(features_dir) / f"{e.utt_id}.feat" if features_dir else None
        if cached is not None and cached.exists():
            fm = feat.read_features(cached, cfg)
            if fm.dim != cfg.dim:
                raise DataError(f"{cached}: dim {fm.dim} does not match configured {cfg.dim}")
            if normalize:
                fm = feat.mean_normalize(fm)
        else:
            fm = utterance_features(audio.read_wav(e.path), cfg, normalize)
        out.append(LabeledFeatures(e.utt_id, fm, e.label))
    return out


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)
    spec_augment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    chunk: ChunkSpec = field(default_factory=ChunkSpec)
    validation_segments: int = 0
    seed: int = 0
    strict_split: bool = False
    mean_normalize: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfig("epochs must be >= 0 and batch_size >= 1")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    val_eer: float
    val_loss: float = float("nan")
    val_records: list[ScoreRecord] = field(default_factory=list)

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss:.6f}\t{self.accuracy:.4f}\t{self.val_eer:.4f}"


@dataclass
class TrainResult:
    model: Model
    log: list[EpochLog]
    best_epoch: int | None


def _predict(model: Model, x: np.ndarray, mode: str = NORMAL, batch_size: int = 64) -> np.ndarray:
    out = [model.forward(x[i:i + batch_size], mode, train=False) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 2))


def train_segments(model: Model, train: Sequence[Segment], val: Sequence[Segment], cfg: TrainConfig) -> TrainResult:
    """The training loop over pre-cut segments."""
    if cfg.epochs == 0:
        return TrainResult(model, [], None)
    if not train:
        raise EmptyFeatures("no training segments")
    dtype = model.dtype
    x = np.stack([s.values for s in train]).astype(dtype)
    y = np.array([s.label for s in train])
    xv = np.stack([s.values for s in val]).astype(dtype) if val else None
    yv = np.array([s.label for s in val])
    rng = np.random.default_rng(cfg.seed)
    opt_state: dict = {}
    augmenting = cfg.spec_augment.f_pct > 0 or cfg.spec_augment.t_pct > 0
    history: list[EpochLog] = []
    best, best_key, best_epoch = None, None, None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            if augmenting:
                xb = np.stack([spec_augment_array(c, cfg.spec_augment, rng) for c in xb])
            probs = model.forward(xb, NORMAL, train=True)
            loss, g = focal_loss(probs, y[idx], cfg.focal)
            model.backward(g.astype(dtype, copy=False))
            optimizer_step(model.parameters(), model.gradients(), opt_state, cfg.optimizer)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
        entry = EpochLog(epoch, total_loss / len(x), correct / len(x), float("nan"))
        if xv is not None:
            pv = _predict(model, xv)
            entry.val_loss, _ = focal_loss(pv, yv, cfg.focal)
            entry.val_records = [ScoreRecord(s.seg_id, float(p), LABELS[s.label]) for s, p in zip(val, pv[:, 1])]
            try:
                entry.val_eer = compute_eer(entry.val_records).eer
            except SingleClassInput:
                pass
            key = (entry.val_eer if not math.isnan(entry.val_eer) else 1.0, entry.val_loss)
            if best_key is None or key < best_key:
                best_key, best_epoch, best = key, epoch, copy.deepcopy(model.state_dict())
        log.info("epoch %s", entry.line())
        history.append(entry)
    if best is not None:
        model.load_state_dict(best)
    return TrainResult(model, history, best_epoch if best is not None else cfg.epochs)


def train_features(utterances: Sequence[LabeledFeatures], cfg: TrainConfig, model: Model) -> TrainResult:
    if not utterances:
        raise EmptyManifest("no training utterances")
    if len({u.label for u in utterances}) < 2:
        raise SingleClassManifest("training data must contain both bonafide and fake utterances")
    segs = build_segments(utterances, cfg.chunk)
    train_set, val_set = make_splits(segs, cfg.validation_segments, cfg.seed, cfg.strict_split)
    return train_segments(model, train_set, val_set, cfg)


def train(manifest: Sequence[ManifestEntry], feature_cfg: FeatureConfig, cfg: TrainConfig,
          model: Model, features_dir=None) -> TrainResult:
    """Train ``model`` in place on the manifest; returns the best-validation
    weights (or the last epoch's when there is no validation split)."""
    if not manifest:
        raise EmptyManifest("empty manifest")
    if len({e.label for e in manifest}) < 2:
        raise SingleClassManifest("training manifest must contain both bonafide and fake utterances")
    utts = load_features(manifest, feature_cfg, features_dir, cfg.mean_normalize)
    return train_features(utts, cfg, model)


def finetune_config(cfg: TrainConfig) -> TrainConfig:
    """Raise chunk overlap to 70% and cut the learning rate 100-fold."""
    return replace(cfg, chunk=replace(cfg.chunk, overlap_ratio=FINETUNE_OVERLAP),
                   optimizer=cfg.optimizer.scaled(FINETUNE_LR_FACTOR))


def finetune(model: Model, manifest: Sequence[ManifestEntry], feature_cfg: FeatureConfig,
             cfg: TrainConfig, features_dir=None) -> TrainResult:
    return train(manifest, feature_cfg, finetune_config(cfg), model, features_dir)


def finetune_features(model: Model, utterances: Sequence[LabeledFeatures], cfg: TrainConfig) -> TrainResult:
    return train_features(utterances, finetune_config(cfg), model)


def mean_loss(model: Model, utterances: Sequence[LabeledFeatures], chunk: ChunkSpec,
              focal: FocalLossConfig = FocalLossConfig()) -> float:
    """Infer-phase focal loss over every chunk of ``utterances``."""
    segs = build_segments(utterances, chunk)
    x = np.stack([s.values for s in segs]).astype(model.dtype)
    loss, _ = focal_loss(_predict(model, x), np.array([s.label for s in segs]), focal)
    return loss


# -- scoring ----------------------------------------------------------------

def aggregate(chunk_scores: np.ndarray, how: str = "mean") -> float:
    if how == "mean":
        return float(np.mean(chunk_scores))
    if how == "max":
        return float(np.max(chunk_scores))
    if how == "logit_mean":
        p = np.clip(chunk_scores.astype(np.float64), 1e-12, 1 - 1e-12)
        z = np.mean(np.log(p) - np.log1p(-p))
        return float(1.0 / (1.0 + np.exp(-z)))
    raise InvalidConfig(f"aggregation must be one of {AGGREGATIONS}")


def score_features(model: Model, features: FeatureMatrix, chunk: ChunkSpec, mode: str = NORMAL,
                   aggregation: str = "mean") -> float:
    chunks = segment(features, chunk)
    if not chunks:
        raise EmptyFeatures("utterance shorter than one chunk and pad_policy is drop_short")
    probs = _predict(model, np.stack(chunks).astype(model.dtype), mode)
    return aggregate(probs[:, 1], aggregation)


def score_utterance(model: Model, clip: audio.AudioClip, feature_cfg: FeatureConfig, chunk: ChunkSpec,
                    mode: str = NORMAL, utt_id: str = "", label: str | None = None,
                    aggregation: str = "mean", normalize: bool = True) -> ScoreRecord:
    """Fake-probability of one utterance: mean over its chunks."""
    fm = utterance_features(clip, feature_cfg, normalize)
    return ScoreRecord(utt_id, score_features(model, fm, chunk, mode, aggregation), label)


__all__ = [
    "BONAFIDE", "FAKE", "ChunkSpec", "EpochLog", "LabeledFeatures", "ManifestEntry", "Segment",
    "TrainConfig", "TrainResult", "build_segments", "chunk_starts", "finetune", "finetune_config",
    "finetune_features", "load_features", "make_splits", "read_manifest", "score_features",
    "score_utterance", "segment", "train", "train_features", "train_segments", "write_manifest",
]
