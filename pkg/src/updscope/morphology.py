"""Street-canyon (height / width) bins and morphology-stratified reports.

The ratio estimator here is a proxy, not a survey-grade canyon measure:

* canyon height = median, over columns containing building pixels, of the
  longest vertical run of building pixels in that column;
* canyon width = median, over bottom-third rows containing road, of the
  longest horizontal run of road pixels in that row.

Bins are Open (ratio 0), Low (0, 1], Mid (1, 2], Deep (> 3); ratios in
(2, 3] and images without road are Unbinned. Boundary values fall into
the lower bin. Ratios or bin names supplied through the manifest always
take precedence over the estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .metrics import DetectionMetrics, MetricError, RankingJudgment, detection_metrics, rank_metrics_at_k
from .segmentation import CLASS_IDS, SegmentationMap

BUILDING = CLASS_IDS["building"]
ROAD = CLASS_IDS["road"]


class MorphologyBin(str, Enum):
    OPEN = "Open"
    LOW = "Low"
    MID = "Mid"
    DEEP = "Deep"
    UNBINNED = "Unbinned"

    @property
    def label(self) -> str:
        return _BIN_LABELS[self]


_BIN_LABELS = {
    MorphologyBin.OPEN: "h/w=0",
    MorphologyBin.LOW: "0<h/w<1",
    MorphologyBin.MID: "1<h/w<2",
    MorphologyBin.DEEP: "h/w>3",
    MorphologyBin.UNBINNED: "unbinned",
}
REPORT_BINS = (MorphologyBin.OPEN, MorphologyBin.LOW, MorphologyBin.MID, MorphologyBin.DEEP)


def _longest_run(flags: np.ndarray) -> int:
    """Longest run of True along the last axis, per leading index."""
    flags = np.asarray(flags, dtype=bool)
    best = np.zeros(flags.shape[:-1], dtype=np.int64)
    cur = np.zeros_like(best)
    for j in range(flags.shape[-1]):
        cur = np.where(flags[..., j], cur + 1, 0)
        best = np.maximum(best, cur)
    return best


def estimate_ratio(seg: SegmentationMap) -> float | None:
    """Proxy h_c / w_c; 0 without buildings, None without road."""
    data = seg.data
    h = data.shape[0]
    bottom = data[h - max(h // 3, 1):]
    road_rows = (bottom == ROAD)
    road_rows = road_rows[road_rows.any(axis=1)]
    if road_rows.size == 0:
        return None
    building = data == BUILDING
    if not building.any():
        return 0.0
    width = float(np.median(_longest_run(road_rows)))
    cols = building[:, building.any(axis=0)]
    height = float(np.median(_longest_run(cols.T)))
    return height / width


def bin_for_ratio(ratio: float | None) -> MorphologyBin:
    if ratio is None or not np.isfinite(ratio) or ratio < 0:
        return MorphologyBin.UNBINNED
    if ratio == 0:
        return MorphologyBin.OPEN
    if ratio <= 1:
        return MorphologyBin.LOW
    if ratio <= 2:
        return MorphologyBin.MID
    if ratio > 3:
        return MorphologyBin.DEEP
    return MorphologyBin.UNBINNED


def parse_bin(value: str) -> MorphologyBin:
    """Manifest value: a bin name (any case) or a raw ratio."""
    text = value.strip()
    for b in MorphologyBin:
        if text.lower() in (b.value.lower(), b.label.lower()):
            return b
    try:
        return bin_for_ratio(float(text))
    except ValueError:
        raise ValueError(f"unrecognised morphology value {value!r}") from None


@dataclass(frozen=True)
class ImageResult:
    image_id: str
    bin: MorphologyBin
    prediction: int | None = None
    label: int | None = None
    judgment: RankingJudgment | None = None


@dataclass
class BinReport:
    bin: MorphologyBin
    n_images: int
    detection: DetectionMetrics | None
    map_at_k: list[float] | None


@dataclass
class StratifiedReport:
    rows: dict[MorphologyBin, BinReport]
    omitted: list[MorphologyBin]
    unbinned: int
    total: int


def stratified_report(results: Sequence[ImageResult], k_max: int = 4) -> StratifiedReport:
    """Per-bin detection metrics and mAP@1..k_max; empty bins are omitted."""
    rows: dict[MorphologyBin, BinReport] = {}
    omitted = []
    for b in REPORT_BINS:
        members = [r for r in results if r.bin == b]
        if not members:
            omitted.append(b)
            continue
        scored = [r for r in members if r.prediction is not None and r.label is not None]
        det = detection_metrics([r.prediction for r in scored], [r.label for r in scored]) if scored else None
        judged = [r.judgment for r in members if r.judgment is not None]
        maps = None
        if judged:
            try:
                maps = [rank_metrics_at_k(judged, k)["mAP"] for k in range(1, k_max + 1)]
            except MetricError:
                maps = None
        rows[b] = BinReport(b, len(members), det, maps)
    unbinned = sum(1 for r in results if r.bin == MorphologyBin.UNBINNED)
    return StratifiedReport(rows, omitted, unbinned, len(results))


def format_stratified(report: StratifiedReport, k_max: int = 4) -> str:
    head = f"{'Morphology':<10} | {'n':>4} | Accuracy |   Recall | Precision |       F1"
    head += "".join(f" | mAP@{k:<3}" for k in range(1, k_max + 1))
    lines = [head, "-" * len(head)]
    for b, row in report.rows.items():
        d = row.detection
        det = (
            f"{100 * d.accuracy:7.2f}% | {100 * d.recall:7.2f}% | {100 * d.precision:8.2f}% | {100 * d.f1:7.2f}%"
            if d else f"{'-':>8} | {'-':>8} | {'-':>9} | {'-':>8}"
        )
        maps = "".join(
            f" | {100 * v:6.2f}%" for v in row.map_at_k
        ) if row.map_at_k else "".join(f" | {'-':>7}" for _ in range(k_max))
        lines.append(f"{b.label:<10} | {row.n_images:>4} | {det}{maps}")
    for b in report.omitted:
        lines.append(f"# {b.label}: no images, row omitted")
    lines.append(f"# unbinned images: {report.unbinned} of {report.total}")
    return "\n".join(lines) + "\n"
