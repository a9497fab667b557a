"""Equal error rate and the challenge's weighted final score.

Scores are fake-probabilities: higher means more likely fake. At threshold
``t`` a bona fide utterance with score >= t is a false acceptance and a fake
utterance with score < t is a false rejection.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, IoFailure, OutOfRange, SingleClassInput

BONAFIDE = "bonafide"
FAKE = "fake"
LABELS = (BONAFIDE, FAKE)


@dataclass(frozen=True)
class ScoreRecord:
    utt_id: str
    score: float
    label: str | None = None


@dataclass(frozen=True)
class EERResult:
    eer: float
    threshold: float


def _split_scores(records: Iterable[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    fake, bona = [], []
    for r in records:
        if r.label == FAKE:
            fake.append(r.score)
        elif r.label == BONAFIDE:
            bona.append(r.score)
        else:
            raise DataError(f"record {r.utt_id} has no usable label ({r.label!r})")
    if not fake or not bona:
        raise SingleClassInput("EER needs at least one fake and one bona fide score")
    return np.asarray(fake, dtype=np.float64), np.asarray(bona, dtype=np.float64)


def eer_from_scores(fake: np.ndarray, bona: np.ndarray) -> EERResult:
    fake = np.sort(np.asarray(fake, dtype=np.float64))
    bona = np.sort(np.asarray(bona, dtype=np.float64))
    if fake.size == 0 or bona.size == 0:
        raise SingleClassInput("EER needs at least one fake and one bona fide score")
    thresholds = np.unique(np.concatenate([fake, bona]))
    thresholds = np.concatenate([[-np.inf], thresholds, [np.inf]])
    far = 1.0 - np.searchsorted(bona, thresholds, side="left") / bona.size
    frr = np.searchsorted(fake, thresholds, side="left") / fake.size
    diff = far - frr  # non-increasing, +1 at -inf and -1 at +inf
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return EERResult(float(far[k]), float(thresholds[k]))
    j = k - 1
    frac = diff[j] / (diff[j] - diff[k])
    eer = far[j] + frac * (far[k] - far[j])
    lo, hi = thresholds[j], thresholds[k]
    if np.isfinite(lo) and np.isfinite(hi):
        threshold = lo + frac * (hi - lo)
    else:
        threshold = lo if np.isfinite(lo) else hi
    return EERResult(float(eer), float(threshold))


def compute_eer(records: Iterable[ScoreRecord]) -> EERResult:
    """EER by sweeping every distinct score as a threshold.

    Where FAR and FRR cross between two adjacent thresholds the EER is
    linearly interpolated along both curves.
    """
    fake, bona = _split_scores(records)
    return eer_from_scores(fake, bona)


def final_score(round1_eer: float, round2_eer: float) -> float:
    """Challenge ranking metric: 40% round one EER plus 60% round two EER."""
    for v in (round1_eer, round2_eer):
        if not 0.0 <= v <= 1.0:
            raise OutOfRange(f"EER {v} outside [0, 1]")
    return 0.4 * round1_eer + 0.6 * round2_eer


def write_scores(records: Iterable[ScoreRecord], path) -> None:
    lines = [f"{r.utt_id}\t{r.score:.6f}" for r in records]
    try:
        Path(path).write_text("".join(line + "\n" for line in lines))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_scores(path, labels: dict[str, str] | None = None) -> list[ScoreRecord]:
    """Read ``utt_id<TAB>score[<TAB>label]``; ``labels`` overrides column 3."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected utt_id<TAB>score[<TAB>label]")
        try:
            score = float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad score {parts[1]!r}") from exc
        if not np.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score")
        label = parts[2].strip() if len(parts) == 3 else None
        if labels is not None:
            label = labels.get(parts[0], label)
        if label is not None and label not in LABELS:
            raise DataError(f"{path}:{lineno}: unknown label {label!r}")
        records.append(ScoreRecord(parts[0], score, label))
    return records
