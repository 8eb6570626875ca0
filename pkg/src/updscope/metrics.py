"""Detection metrics and top-k ranking metrics.

Ranking metrics use binary relevance: a predicted class is relevant when
it belongs to the ground-truth top-k set R. With ``r = |R|`` (k, or fewer
when the ground truth is short):

    Prec@i   = |pred[:i] & R| / i
    AP@k     = (1/r) * sum_{i<=k} rel(i) * Prec@i
    RPrec@k  = |pred[:r] & R| / r
    NDCG@k   = sum_{i<=k} rel(i)/log2(i+1) / sum_{i<=r} 1/log2(i+1)

At k = 1 all three reduce to the top-1 hit indicator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

RANK_METRICS = ("mAP", "RPrec", "NDCG")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionMetrics:
    accuracy: float
    recall: float
    precision: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: tuple[str, ...] = field(default_factory=tuple)

    def as_row(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
        }


def confusion(preds: Sequence[int], labels: Sequence[int]) -> tuple[int, int, int, int]:
    p = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise MetricError("predictions and labels must be 1-D and of equal length")
    if p.size == 0:
        raise MetricError("cannot score an empty prediction set")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise MetricError("predictions and labels must be 0/1")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    return tp, fp, fn, tn


def detection_metrics(preds: Sequence[int], labels: Sequence[int]) -> DetectionMetrics:
    """Accuracy, recall, precision and F1 with disorder (1) as the positive class.

    Undefined ratios (no predicted or no actual positives) are reported as
    0 and named in ``flags``.
    """
    tp, fp, fn, tn = confusion(preds, labels)
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision_undefined")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall_undefined")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / (tp + fp + fn + tn)
    return DetectionMetrics(accuracy, recall, precision, f1, tp, fp, fn, tn, tuple(flags))


@dataclass(frozen=True)
class RankingJudgment:
    predicted: tuple[int, ...]
    ground_truth: tuple[int, ...]
    image_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "predicted", tuple(int(c) for c in self.predicted))
        object.__setattr__(self, "ground_truth", tuple(int(c) for c in self.ground_truth))
        for name, seq in (("predicted", self.predicted), ("ground_truth", self.ground_truth)):
            if len(set(seq)) != len(seq):
                raise MetricError(f"{name} ranking of {self.image_id or 'judgment'} has duplicates")


def _discount(i: int) -> float:
    return 1.0 / math.log2(i + 1)


def image_rank_metrics(judgment: RankingJudgment, k: int) -> tuple[float, float, float]:
    """(AP@k, RPrec@k, NDCG@k) for one image."""
    if k < 1:
        raise MetricError("k must be >= 1")
    relevant = set(judgment.ground_truth[:k])
    r = len(relevant)
    if r == 0:
        raise MetricError(f"{judgment.image_id or 'judgment'} has an empty ground truth")
    pred = judgment.predicted[:k]
    rel = [1 if c in relevant else 0 for c in pred] + [0] * (k - len(pred))

    hits = 0
    ap_sum = 0.0
    dcg = 0.0
    for i, flag in enumerate(rel, start=1):
        if flag:
            hits += 1
            ap_sum += hits / i
            dcg += _discount(i)
    ap = ap_sum / r
    rprec = sum(rel[:r]) / r
    idcg = sum(_discount(i) for i in range(1, r + 1))
    return ap, rprec, dcg / idcg


def rank_metrics_at_k(judgments: Sequence[RankingJudgment], k: int) -> dict[str, float]:
    """Mean of the per-image metrics over ``judgments``."""
    if not judgments:
        raise MetricError("no ranking judgments to evaluate")
    per_image = np.array([image_rank_metrics(j, k) for j in judgments], dtype=np.float64)
    means = per_image.mean(axis=0)
    return dict(zip(RANK_METRICS, (float(v) for v in means)))


def ranking_table(judgments: Sequence[RankingJudgment], k_max: int = 4) -> dict[str, list[float]]:
    """metric name -> [value at k = 1..k_max]."""
    cols = [rank_metrics_at_k(judgments, k) for k in range(1, k_max + 1)]
    return {m: [c[m] for c in cols] for m in RANK_METRICS}


def format_ranking_table(table: dict[str, list[float]]) -> str:
    k_max = len(next(iter(table.values())))
    header = ["Metrics"] + [f"Top@{k}" for k in range(1, k_max + 1)]
    lines = [" | ".join(f"{h:>8}" for h in header)]
    lines.append("-" * len(lines[0]))
    for metric, values in table.items():
        lines.append(" | ".join([f"{metric:>8}"] + [f"{100 * v:7.2f}%" for v in values]))
    return "\n".join(lines) + "\n"


def format_detection_table(rows: dict[str, DetectionMetrics]) -> str:
    width = max([len("Group")] + [len(k) for k in rows])
    lines = [f"{'Group':<{width}} | Accuracy |   Recall | Precision |       F1"]
    lines.append("-" * len(lines[0]))
    for name, m in rows.items():
        lines.append(
            f"{name:<{width}} | {100 * m.accuracy:7.2f}% | {100 * m.recall:7.2f}% "
            f"| {100 * m.precision:8.2f}% | {100 * m.f1:7.2f}%"
        )
    return "\n".join(lines) + "\n"
