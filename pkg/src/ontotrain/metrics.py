"""Missing-label-aware classification metrics and normalized attention entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.stats import rankdata

from .batching import encode_all, predict
from .model import AttentionMaps, ShapeMismatch


class ShapeError(ValueError):
    pass


class DegenerateSequence(ValueError):
    pass


@dataclass
class PredictionBatch:
    scores: np.ndarray
    labels: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.present = np.asarray(self.present)
        if self.scores.ndim != 2 or self.scores.shape != self.labels.shape or self.scores.shape != self.present.shape:
            raise ShapeError(
                f"scores {self.scores.shape}, labels {self.labels.shape} and present {self.present.shape} must be equal 2-D shapes"
            )


def _confusion(pred: np.ndarray, labels: np.ndarray, present: np.ndarray):
    seen = present == 1
    pos = labels == 1
    tp = np.sum(pred & pos & seen, axis=0)
    fp = np.sum(pred & ~pos & seen, axis=0)
    fn = np.sum(~pred & pos & seen, axis=0)
    return tp, fp, fn


def micro_f1(batch: PredictionBatch, threshold: float = 0.5) -> float:
    """F1 from TP/FP/FN pooled over every present cell; 0 when nothing is positive."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    tp, fp, fn = (int(c.sum()) for c in _confusion(batch.scores >= threshold, batch.labels, batch.present))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_per_class(batch: PredictionBatch, threshold: float = 0.5) -> list[float | None]:
    """Per-label F1; ``None`` where the label has no present cell or no positive label or prediction."""
    tp, fp, fn = _confusion(batch.scores >= threshold, batch.labels, batch.present)
    counts = batch.present.sum(axis=0)
    out = []
    for j in range(batch.scores.shape[1]):
        denom = 2 * tp[j] + fp[j] + fn[j]
        out.append(float(2 * tp[j] / denom) if counts[j] and denom else None)
    return out


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Mann-Whitney AUC with half credit for ties; ``None`` without both classes."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) == 1
    n_pos = int(pos.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks are exact half-integers
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_auc_per_class(batch: PredictionBatch) -> list[float | None]:
    out = []
    for j in range(batch.scores.shape[1]):
        seen = batch.present[:, j] == 1
        out.append(roc_auc(batch.scores[seen, j], batch.labels[seen, j]))
    return out


def macro_roc_auc(batch: PredictionBatch) -> float | None:
    defined = [a for a in roc_auc_per_class(batch) if a is not None]
    return float(np.mean(defined)) if defined else None


@dataclass
class EntropyReport:
    per_head: np.ndarray  # (layers, heads), NaN where no row contributed
    overall: float
    rows: int
    skipped: int = 0
    per_layer: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {
            f"{layer}.{head}": (None if math.isnan(v) else float(v))
            for (layer, head), v in np.ndenumerate(self.per_head)
        }
        return {"per_head": d, "per_layer": self.per_layer, "overall": self.overall, "rows": self.rows, "skipped": self.skipped}


def row_entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) along the last axis, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def normalized_row_entropy(p: np.ndarray) -> np.ndarray:
    n = np.asarray(p).shape[-1]
    if n < 2:
        raise DegenerateSequence(f"need at least 2 keys, got {n}")
    return np.clip(row_entropy(p) / math.log(n), 0.0, 1.0)


def normalized_entropy(maps: AttentionMaps | Iterable[AttentionMaps], exclude_specials: bool = True) -> EntropyReport:
    """Mean normalized attention entropy per (layer, head) and overall.

    With ``exclude_specials`` the CLS position (index 0) is dropped from both
    queries and keys and each remaining row is renormalized, so only molecule
    tokens count. Sequences with fewer than two such positions are skipped.
    """
    if isinstance(maps, AttentionMaps):
        maps = [maps]
    total = None
    count = 0
    skipped = 0
    for m in maps:
        v = m.values
        if exclude_specials:
            v = v[:, :, 1:, 1:]
            mass = v.sum(axis=-1, keepdims=True)
            # A row whose mass underflowed entirely onto CLS counts as uniform.
            v = np.divide(v, mass, out=np.full_like(v, 1.0 / max(v.shape[-1], 1)), where=mass > 0)
        n = v.shape[-1]
        if n < 2:
            skipped += 1
            continue
        h = normalized_row_entropy(v).sum(axis=-1)  # (layers, heads)
        total = h if total is None else total + h
        count += n
    if total is None:
        raise DegenerateSequence(f"no sequence had at least 2 positions ({skipped} skipped)")
    per_head = total / count
    return EntropyReport(
        per_head=per_head,
        overall=float(per_head.mean()),
        rows=count,
        skipped=skipped,
        per_layer=[float(x) for x in per_head.mean(axis=1)],
    )


def evaluate(model, data, vocab, threshold: float = 0.5, batch_size: int = 64, with_entropy: bool = True) -> dict:
    """Eval-mode metrics of a multi-label model on a :class:`~ontotrain.labeled.LabeledSet`."""
    if model.n_labels != data.n_labels:
        raise ShapeMismatch(f"model head has {model.n_labels} outputs but the set has {data.n_labels} labels")
    ids, mask = encode_all(data.sequences, vocab, model.config.max_len)
    scores, maps = predict(model, ids, mask, batch_size, with_attention=with_entropy)
    batch = PredictionBatch(scores, data.labels, data.present)
    f1s = f1_per_class(batch, threshold)
    aucs = roc_auc_per_class(batch)
    report = {
        "rows": len(data),
        "threshold": threshold,
        "micro_f1": micro_f1(batch, threshold),
        "macro_roc_auc": macro_roc_auc(batch),
        "per_class": [
            {
                "label": name,
                "f1": f1s[j],
                "roc_auc": aucs[j],
                "present": int(data.present[:, j].sum()),
                "positive": int((data.labels[:, j] & data.present[:, j]).sum()),
            }
            for j, name in enumerate(data.label_names)
        ],
    }
    if with_entropy:
        try:
            report["entropy"] = normalized_entropy(maps).as_dict()
        except DegenerateSequence:
            report["entropy"] = None
    return report
