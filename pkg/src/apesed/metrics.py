"""Frame-level evaluation: confusion matrix, accuracy, per-class and
weighted F1, average precision for binary detection, and collapsing of
predicted label runs into call segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_ingest import FRAME_SEC
from .errors import LengthMismatch, NoPositives


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray  # (C+1) x (C+1) counts, rows gold, cols predicted
    accuracy: float
    per_class_f1: np.ndarray
    weighted_f1: float
    aucpr: float | None
    num_frames: int

    def to_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "accuracy": self.accuracy,
            "per_class_f1": [float(x) for x in self.per_class_f1],
            "weighted_f1": self.weighted_f1,
            "aucpr": self.aucpr,
            "confusion": self.confusion.tolist(),
        }


@dataclass(frozen=True)
class CallSegment:
    clip_id: str
    start: float
    end: float
    class_index: int
    mean_posterior: float


def predicted_labels(posteriors) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(posteriors.values, axis=1)


def confusion_matrix(golds: np.ndarray, preds: np.ndarray, num_class: int) -> np.ndarray:
    conf = np.zeros((num_class, num_class), dtype=np.int64)
    np.add.at(conf, (golds, preds), 1)
    return conf


def f1_from_confusion(conf: np.ndarray) -> np.ndarray:
    """Per-class F1 = 2*tp / (2*tp + fp + fn), with 0/0 defined as 0."""
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    den = 2 * tp + fp + fn
    f1 = np.zeros(len(tp))
    nz = den > 0
    f1[nz] = 2 * tp[nz] / den[nz]
    return f1


def evaluate(predictions: list, golds: list) -> EvalReport:
    """Score per-frame posteriors against gold label tracks.

    Weighted F1 averages per-class F1 by gold support (zero-support
    classes carry zero weight). In the binary case the report also gets
    average precision of the positive class, or None when the gold has no
    positive frames.
    """
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not predictions:
        raise LengthMismatch("nothing to evaluate")
    num_class = predictions[0].values.shape[1]
    gold_all, pred_all, score_all = [], [], []
    for p, g in zip(predictions, golds):
        labels = np.asarray(g.labels if hasattr(g, "labels") else g)
        if p.values.shape[0] != len(labels):
            raise LengthMismatch(
                f"clip {p.clip_id}: {p.values.shape[0]} predicted rows vs "
                f"{len(labels)} gold frames"
            )
        gold_all.append(labels)
        pred_all.append(np.argmax(p.values, axis=1))
        if num_class == 2:
            score_all.append(p.values[:, 1])
    gold = np.concatenate(gold_all)
    pred = np.concatenate(pred_all)

    conf = confusion_matrix(gold, pred, num_class)
    n = int(conf.sum())
    accuracy = float(np.trace(conf)) / n
    f1 = f1_from_confusion(conf)
    support = conf.sum(axis=1).astype(np.float64)
    weighted_f1 = float((support * f1).sum() / support.sum())

    ap = None
    if num_class == 2 and (gold == 1).any():
        ap = aucpr(np.concatenate(score_all), gold)
    return EvalReport(conf, accuracy, f1, weighted_f1, ap, n)


def aucpr(scores: np.ndarray, golds: np.ndarray) -> float:
    """Average precision: sum of (R_n - R_{n-1}) * P_n over the descending
    score sweep, with equal scores forming a single threshold group."""
    scores = np.asarray(scores, dtype=np.float64)
    golds = np.asarray(golds)
    total_pos = int((golds == 1).sum())
    if total_pos == 0:
        raise NoPositives("gold labels contain no positive frames")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = (golds[order] == 1).astype(np.int64)
    group_end = np.append(s[1:] != s[:-1], True)
    tp = np.cumsum(y)[group_end].astype(np.float64)
    npred = (np.arange(len(s)) + 1)[group_end].astype(np.float64)
    recall = tp / total_pos
    precision = tp / npred
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def to_segments(posteriors, min_dur: float = 0.0) -> list[CallSegment]:
    """Collapse maximal runs of a predicted positive class into segments.

    Boundaries land on the 20 ms frame grid; runs shorter than min_dur are
    dropped; confidence is the run's mean posterior for its class.
    """
    labels = np.argmax(posteriors.values, axis=1)
    if len(labels) == 0:
        return []
    boundaries = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(labels)]])
    segments = []
    for a, b in zip(starts, ends):
        k = int(labels[a])
        if k == 0:
            continue
        dur = (b - a) * FRAME_SEC
        if dur < min_dur:
            continue
        segments.append(CallSegment(
            clip_id=posteriors.clip_id,
            start=a * FRAME_SEC,
            end=b * FRAME_SEC,
            class_index=k,
            mean_posterior=float(posteriors.values[a:b, k].mean()),
        ))
    return segments
