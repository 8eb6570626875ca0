"""Score-weighted class activation maps over the last-stage token grid.

Each selected channel of the final (head-normalized) grid is upsampled to
the input size and min-max normalized into a soft mask. The classifier
scores the masked image; the increase of the target-class probability over
a baseline input becomes the channel's score. Softmax over the scores
gives the channel weights, and the map is the min-max normalized ReLU of
the weighted channel sum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .raster import ActivationMap, FeatureGrid, ImageRaster, bilinear_resize, minmax_normalize
from .swin import softmax


class ExplainerError(ValueError):
    pass


class Model(Protocol):
    """What an explainer needs from a classifier."""

    def trace(self, image): ...

    def predict_proba(self, images: np.ndarray) -> np.ndarray: ...


class Explainer(Protocol):
    def explain(self, image: ImageRaster, model: Model) -> ActivationMap: ...


@dataclass(frozen=True)
class ExplainerConfig:
    target_class: int = 1
    channel_budget: int | None = None
    baseline: float | np.ndarray = 0.0
    chunk_size: int = 32

    def __post_init__(self):
        if self.channel_budget is not None and self.channel_budget < 1:
            raise ExplainerError("channel_budget must be at least 1")
        if self.target_class not in (0, 1):
            raise ExplainerError("target_class must be 0 or 1")
        if self.chunk_size < 1:
            raise ExplainerError("chunk_size must be positive")


def select_channels(grid: FeatureGrid | np.ndarray, budget: int | None = None) -> list[int]:
    """Channels ordered by L2 norm (descending, ties by index), truncated to ``budget``."""
    data = grid.data if isinstance(grid, FeatureGrid) else np.asarray(grid)
    if budget is not None and budget < 1:
        raise ExplainerError("budget must be at least 1")
    norms = np.sqrt(np.sum(data.reshape(-1, data.shape[-1]) ** 2, axis=0))
    order = sorted(range(len(norms)), key=lambda k: (-norms[k], k))
    return order if budget is None else order[:budget]


def _baseline_image(image: np.ndarray, baseline) -> np.ndarray:
    if np.isscalar(baseline):
        return np.full_like(image, float(baseline))
    base = np.asarray(baseline, dtype=np.float64)
    if base.shape != image.shape:
        raise ExplainerError(f"baseline shape {base.shape} does not match image {image.shape}")
    return base


def channel_masks(grid: np.ndarray, channels: Sequence[int], height: int, width: int) -> np.ndarray:
    """Upsampled, min-max normalized channel maps as ``(len(channels), H, W)``."""
    up = bilinear_resize(grid[:, :, list(channels)], height, width)
    return np.stack([minmax_normalize(up[:, :, i]) for i in range(up.shape[2])])


def masked_scores(
    image: np.ndarray,
    masks: np.ndarray,
    model: Model,
    target_class: int,
    baseline_score: float,
) -> np.ndarray:
    """Target-class probability of ``image * mask`` minus the baseline score."""
    masked = image[None, :, :, :] * masks[:, :, :, None]
    return model.predict_proba(masked)[:, target_class] - baseline_score


def score_cam(
    image: np.ndarray,
    grid: np.ndarray,
    channels: Sequence[int],
    model: Model,
    cfg: ExplainerConfig = ExplainerConfig(),
) -> ActivationMap:
    """Score-CAM over an explicit channel list (one forward per channel + baseline)."""
    if len(channels) == 0:
        raise ExplainerError("no channels selected")
    h, w = image.shape[:2]
    base = _baseline_image(image, cfg.baseline)
    baseline_score = float(model.predict_proba(base[None])[0, cfg.target_class])

    scores = np.empty(len(channels))
    for start in range(0, len(channels), cfg.chunk_size):
        chunk = channels[start:start + cfg.chunk_size]
        masks = channel_masks(grid, chunk, h, w)
        scores[start:start + len(chunk)] = masked_scores(
            image, masks, model, cfg.target_class, baseline_score
        )

    weights = softmax(scores)
    # bilinear resampling is linear, so weighting before upsampling is exact
    combined = grid[:, :, list(channels)] @ weights
    cam = np.maximum(bilinear_resize(combined, h, w), 0.0)
    return ActivationMap(minmax_normalize(cam))


class ScoreCAM:
    """Default explainer backend."""

    name = "scorecam"

    def __init__(self, cfg: ExplainerConfig = ExplainerConfig()):
        self.cfg = cfg

    def explain(self, image, model: Model) -> ActivationMap:
        data = image.data if isinstance(image, ImageRaster) else np.asarray(image, dtype=np.float64)
        trace = model.trace(data)
        grid = trace.final_grid.data
        channels = select_channels(grid, self.cfg.channel_budget)
        return score_cam(data, grid, channels, model, self.cfg)


EXPLAINERS: dict[str, Callable[..., Explainer]] = {"scorecam": ScoreCAM}


def register_explainer(name: str, factory: Callable[..., Explainer]) -> None:
    """Make an alternative backend selectable by name from the pipeline."""
    EXPLAINERS[name] = factory


def make_explainer(name: str, cfg: ExplainerConfig = ExplainerConfig()) -> Explainer:
    try:
        factory = EXPLAINERS[name]
    except KeyError:
        raise ExplainerError(f"unknown explainer {name!r}; known: {sorted(EXPLAINERS)}") from None
    return factory(cfg)


def explain(image, model: Model, cfg: ExplainerConfig = ExplainerConfig()) -> ActivationMap:
    return ScoreCAM(cfg).explain(image, model)
