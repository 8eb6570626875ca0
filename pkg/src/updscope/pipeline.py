"""Per-image detection and ranking over a manifest, optionally in parallel.

Workers are separate processes that each load the weight file once. BLAS
is pinned to one thread in every worker (and in the serial path) so that
results do not depend on the worker count. Results are sorted by image id
before they are returned.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import weightfile
from .fileio import ManifestRow
from .raster import ActivationMap, load_image, save_activation_png
from .ranking import FactorRanking, rank_factors
from .scorecam import ExplainerConfig, make_explainer
from .segmentation import load_segmentation
from .swin import SwinClassifier

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    weights: Path
    explainer: str = "scorecam"
    target_class: int = 1
    channel_budget: int | None = None
    min_pixels: int | None = None
    top_k: int | None = None
    force: bool = False
    heatmap_dir: Path | None = None
    workers: int = 1
    chunk_size: int = 16

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("worker count must be at least 1")


@dataclass
class Detection:
    image_id: str
    label: int | None = None
    p_upd: float | None = None
    error: str | None = None


@dataclass
class RankOutcome:
    image_id: str
    detection: Detection
    ranking: FactorRanking | None = None
    skipped: bool = False
    error: str | None = None


_state: dict = {}


def _init_worker(cfg: PipelineConfig) -> None:
    _state["cfg"] = cfg
    _state["model"] = SwinClassifier(weightfile.load(cfg.weights), chunk_size=cfg.chunk_size)
    _state["explainer"] = make_explainer(
        cfg.explainer,
        ExplainerConfig(target_class=cfg.target_class, channel_budget=cfg.channel_budget,
                        chunk_size=cfg.chunk_size),
    )


def _detect(model: SwinClassifier, image) -> Detection:
    probs = model.predict_proba(image.data[None])[0]
    return Detection("", int(np.argmax(probs)), float(probs[1]))


def _detect_task(row: ManifestRow) -> Detection:
    with threadpool_limits(limits=1):
        try:
            image = load_image(row.image_path)
            det = _detect(_state["model"], image)
            det.image_id = row.image_id
            return det
        except Exception as exc:  # per-row failure, reported not raised
            return Detection(row.image_id, error=f"{type(exc).__name__}: {exc}")


def _rank_task(row: ManifestRow) -> RankOutcome:
    cfg: PipelineConfig = _state["cfg"]
    with threadpool_limits(limits=1):
        try:
            if row.segmentation_path is None:
                raise FileNotFoundError("manifest row has no segmentation_path")
            image = load_image(row.image_path)
            seg = load_segmentation(row.segmentation_path, expected_dims=(image.height, image.width))
            det = _detect(_state["model"], image)
            det.image_id = row.image_id
            if det.label != 1 and not cfg.force:
                return RankOutcome(row.image_id, det, skipped=True)
            amap: ActivationMap = _state["explainer"].explain(image, _state["model"])
            if cfg.heatmap_dir is not None:
                save_activation_png(amap, Path(cfg.heatmap_dir) / f"{row.image_id}.png")
            ranking = rank_factors(seg, amap, cfg.min_pixels, image_id=row.image_id)
            if ranking.empty_warning:
                logger.warning("%s: no class reaches the minimum pixel count", row.image_id)
            if cfg.top_k is not None:
                ranking = ranking.top(cfg.top_k)
            return RankOutcome(row.image_id, det, ranking)
        except Exception as exc:
            return RankOutcome(row.image_id, Detection(row.image_id), error=f"{type(exc).__name__}: {exc}")


def _run(task: Callable, rows: Sequence[ManifestRow], cfg: PipelineConfig) -> list:
    if not rows:
        return []
    if cfg.workers == 1:
        _init_worker(cfg)
        try:
            results = [task(r) for r in rows]
        finally:
            _state.clear()
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            results = list(pool.map(task, rows))
    return sorted(results, key=lambda r: r.image_id)


def detect_rows(rows: Sequence[ManifestRow], cfg: PipelineConfig) -> list[Detection]:
    return _run(_detect_task, rows, cfg)


def rank_rows(rows: Sequence[ManifestRow], cfg: PipelineConfig) -> list[RankOutcome]:
    if cfg.heatmap_dir is not None:
        Path(cfg.heatmap_dir).mkdir(parents=True, exist_ok=True)
    return _run(_rank_task, rows, cfg)
