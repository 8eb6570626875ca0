"""Perception scores from pairwise votes and disorder labels from them.

Per attribute, each image gets a Q score in [0, 10] from its win ratio
corrected by the strength of the images it beat and lost to:

    W_i = w_i / (w_i + l_i + t_i)        L_i = l_i / (w_i + l_i + t_i)
    Q_i = 10/3 * (W_i + mean_{j beaten by i} W_j - mean_{j beat i} L_j + 1)

A correction term is 0 when the image has no wins (or no losses). The
six attribute scores are combined into one score (the negative
attributes ``boring`` and ``depressing`` enter as 10 - Q), and images at
the low end become disorder (1) while images at the high end become
non-disorder (0).
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ATTRIBUTES = ("safe", "lively", "boring", "wealthy", "depressing", "beautiful")
NEGATIVE_ATTRIBUTES = frozenset({"boring", "depressing"})
OUTCOMES = ("left", "right", "tie")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ComparisonRecord:
    left: str
    right: str
    attribute: str
    outcome: str

    def __post_init__(self):
        if self.left == self.right:
            raise DatasetError(f"image {self.left!r} compared with itself")
        if self.attribute not in ATTRIBUTES:
            raise DatasetError(f"unknown attribute {self.attribute!r}")
        if self.outcome not in OUTCOMES:
            raise DatasetError(f"outcome must be one of {OUTCOMES}, got {self.outcome!r}")


@dataclass(frozen=True)
class QScore:
    image_id: str
    attribute: str
    wins: int
    losses: int
    ties: int
    score: float


def q_formula(win_ratio: float, beaten_win_ratios: Sequence[float], beater_loss_ratios: Sequence[float]) -> float:
    """Evaluate the corrected win-ratio score and clamp it to [0, 10].

    ``beaten_win_ratios`` has one entry per win (opponents repeat when
    beaten repeatedly), ``beater_loss_ratios`` one entry per loss.
    """
    up = float(np.mean(beaten_win_ratios)) if len(beaten_win_ratios) else 0.0
    down = float(np.mean(beater_loss_ratios)) if len(beater_loss_ratios) else 0.0
    q = (10.0 / 3.0) * (win_ratio + up - down + 1.0)
    return min(10.0, max(0.0, q))


def compute_q_scores(records: Iterable[ComparisonRecord], attribute: str) -> list[QScore]:
    """Q scores for every image compared on ``attribute``, sorted by image id."""
    if attribute not in ATTRIBUTES:
        raise DatasetError(f"unknown attribute {attribute!r}")
    recs = [r for r in records if r.attribute == attribute]
    if not recs:
        raise DatasetError(f"no comparisons for attribute {attribute!r}")

    wins: dict[str, list[str]] = defaultdict(list)
    losses: dict[str, list[str]] = defaultdict(list)
    ties: dict[str, int] = defaultdict(int)
    for r in recs:
        if r.outcome == "left":
            wins[r.left].append(r.right)
            losses[r.right].append(r.left)
        elif r.outcome == "right":
            wins[r.right].append(r.left)
            losses[r.left].append(r.right)
        else:
            ties[r.left] += 1
            ties[r.right] += 1

    images = sorted(set(wins) | set(losses) | set(ties))
    totals = {i: len(wins[i]) + len(losses[i]) + ties[i] for i in images}
    win_ratio = {i: len(wins[i]) / totals[i] for i in images}
    loss_ratio = {i: len(losses[i]) / totals[i] for i in images}

    out = []
    for i in images:
        score = q_formula(
            win_ratio[i],
            [win_ratio[j] for j in wins[i]],
            [loss_ratio[j] for j in losses[i]],
        )
        out.append(QScore(i, attribute, len(wins[i]), len(losses[i]), ties[i], score))
    return out


def vote_counts(records: Iterable[ComparisonRecord]) -> dict[str, int]:
    """Number of comparisons each image took part in, over all attributes."""
    counts: dict[str, int] = defaultdict(int)
    for r in records:
        counts[r.left] += 1
        counts[r.right] += 1
    return dict(counts)


def combined_score(per_attribute: Mapping[str, float]) -> float:
    """Mean of the six attribute scores, negative attributes inverted as 10 - Q."""
    vals = [10.0 - per_attribute[a] if a in NEGATIVE_ATTRIBUTES else per_attribute[a] for a in ATTRIBUTES]
    return float(np.mean(vals))


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    label: int | None
    combined_score: float
    scores: Mapping[str, float]


def label_dataset(
    qscores: Mapping[str, Sequence[QScore]],
    low_pct: float = 5.0,
    high_pct: float = 95.0,
    min_votes: int = 100,
    votes: Mapping[str, int] | None = None,
) -> list[LabeledImage]:
    """Percentile labelling on the combined perception score.

    Images need more than ``min_votes`` ratings (when ``votes`` is given)
    and a score for all six attributes. Below the ``low_pct`` percentile ->
    1 (disorder); at or above the ``high_pct`` percentile -> 0; otherwise
    unlabeled (None).

    Raises:
        DatasetError: missing attributes, bad thresholds, or fewer than two
            images in either labeled class.
    """
    missing = [a for a in ATTRIBUTES if a not in qscores]
    if missing:
        raise DatasetError(f"Q scores missing for attributes {missing}")
    if not 0.0 <= low_pct <= high_pct <= 100.0:
        raise DatasetError("need 0 <= low_pct <= high_pct <= 100")

    table: dict[str, dict[str, float]] = defaultdict(dict)
    for attr in ATTRIBUTES:
        for q in qscores[attr]:
            table[q.image_id][attr] = q.score

    eligible = []
    for image_id in sorted(table):
        per = table[image_id]
        if len(per) < len(ATTRIBUTES):
            logger.warning("%s lacks scores for some attributes; skipped", image_id)
            continue
        if votes is not None and votes.get(image_id, 0) <= min_votes:
            continue
        eligible.append(image_id)
    if not eligible:
        raise DatasetError("no image passes the vote and attribute filters")

    combined = np.array([combined_score(table[i]) for i in eligible])
    low = np.percentile(combined, low_pct)
    high = np.percentile(combined, high_pct)
    out = []
    for image_id, c in zip(eligible, combined):
        if c < low:
            label = 1
        elif c >= high:
            label = 0
        else:
            label = None
        out.append(LabeledImage(image_id, label, float(c), dict(table[image_id])))

    n_pos = sum(1 for r in out if r.label == 1)
    n_neg = sum(1 for r in out if r.label == 0)
    if n_pos < 2 or n_neg < 2:
        raise DatasetError(f"too few labeled images: {n_pos} disorder, {n_neg} non-disorder")
    return out


def read_comparisons(path) -> list[ComparisonRecord]:
    with open(path, newline="") as fh:
        return [
            ComparisonRecord(row["left_id"], row["right_id"], row["attribute"].strip().lower(), row["outcome"].strip().lower())
            for row in csv.DictReader(fh)
        ]
