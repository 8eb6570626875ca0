"""Semantic factor ranking by mean activation inside each class region."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .raster import ActivationMap
from .segmentation import NUM_CLASSES, SegmentationMap, class_name

DEFAULT_MIN_FRACTION = 0.001

RANKING_COLUMNS = ["image_id", "rank", "class_id", "class_name", "density", "pixel_count"]


@dataclass(frozen=True)
class RankEntry:
    class_id: int
    density: float
    pixel_count: int

    @property
    def class_name(self) -> str:
        return class_name(self.class_id)


@dataclass(frozen=True)
class FactorRanking:
    image_id: str
    entries: tuple[RankEntry, ...] = field(default_factory=tuple)
    empty_warning: bool = False

    @property
    def class_ids(self) -> list[int]:
        return [e.class_id for e in self.entries]

    def top(self, k: int) -> FactorRanking:
        return FactorRanking(self.image_id, self.entries[:k], self.empty_warning)

    def __len__(self):
        return len(self.entries)


def default_min_pixels(height: int, width: int) -> int:
    """0.1% of the image area, rounded up."""
    return math.ceil(DEFAULT_MIN_FRACTION * height * width)


def rank_factors(
    seg: SegmentationMap,
    act: ActivationMap | np.ndarray,
    min_pixels: int | None = None,
    image_id: str = "",
) -> FactorRanking:
    """Rank present classes by mean activation over their pixels.

    density_i = sum_j [seg_j == i] * act_j / N_i, sorted descending with
    ties broken by ascending class id. Void pixels are never ranked and
    classes with fewer than ``min_pixels`` pixels are skipped.
    """
    a = act.data if isinstance(act, ActivationMap) else np.asarray(act, dtype=np.float64)
    if a.shape != seg.data.shape:
        raise ValueError(f"segmentation {seg.data.shape} and activation {a.shape} differ in size")
    if min_pixels is None:
        min_pixels = default_min_pixels(*a.shape)

    labels = seg.data.ravel()
    counts = np.bincount(labels, minlength=NUM_CLASSES + 1)
    sums = np.bincount(labels, weights=a.ravel().astype(np.float64), minlength=NUM_CLASSES + 1)

    entries = []
    for cid in range(1, NUM_CLASSES + 1):
        n = int(counts[cid])
        if n == 0 or n < min_pixels:
            continue
        entries.append(RankEntry(cid, float(sums[cid] / n), n))
    entries.sort(key=lambda e: (-e.density, e.class_id))
    return FactorRanking(image_id, tuple(entries), empty_warning=not entries)


def ranking_rows(rankings: Iterable[FactorRanking], top_k: int | None = None) -> list[dict]:
    rows = []
    for rk in rankings:
        entries = rk.entries if top_k is None else rk.entries[:top_k]
        for pos, e in enumerate(entries, start=1):
            rows.append({
                "image_id": rk.image_id,
                "rank": pos,
                "class_id": e.class_id,
                "class_name": e.class_name,
                "density": repr(e.density),
                "pixel_count": e.pixel_count,
            })
    return rows


def read_rankings_csv(path) -> dict[str, list[int]]:
    """image_id -> class ids ordered by rank."""
    per_image: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            per_image.setdefault(row["image_id"], []).append((int(row["rank"]), int(row["class_id"])))
    return {k: [c for _, c in sorted(v)] for k, v in per_image.items()}


def read_rankings_full(path) -> dict[str, FactorRanking]:
    per_image: dict[str, list[tuple[int, RankEntry]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entry = RankEntry(int(row["class_id"]), float(row["density"]), int(row["pixel_count"]))
            per_image.setdefault(row["image_id"], []).append((int(row["rank"]), entry))
    return {
        k: FactorRanking(k, tuple(e for _, e in sorted(v, key=lambda t: t[0])))
        for k, v in per_image.items()
    }

