"""Street-scene class schema and segmentation raster ingestion.

Segmentation is produced by an external model and exchanged as an 8-bit
single-channel PNG of class ids (0 = void). A manifest CSV binds every
segmentation raster to its source image.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

VOID = 0

CLASS_NAMES: dict[int, str] = {
    1: "sidewalk",
    2: "building",
    3: "vehicle",
    4: "fence",
    5: "motorcycle",
    6: "person",
    7: "pole",
    8: "road",
    9: "sky",
    10: "traffic sign",
    11: "vegetation",
    12: "wall",
}
NUM_CLASSES = len(CLASS_NAMES)
CLASS_IDS: dict[str, int] = {name: cid for cid, name in CLASS_NAMES.items()}


class SchemaError(ValueError):
    """A raster or table refers to a class outside the fixed schema."""


def class_name(class_id: int) -> str:
    try:
        return CLASS_NAMES[int(class_id)]
    except KeyError:
        raise SchemaError(f"unknown class id {class_id}") from None


def parse_class(token: str) -> int:
    """Accept a class id ("8") or a class name ("road")."""
    token = token.strip()
    if token.isdigit():
        cid = int(token)
        class_name(cid)
        return cid
    try:
        return CLASS_IDS[token.lower()]
    except KeyError:
        raise SchemaError(f"unknown class {token!r}") from None


@dataclass(frozen=True)
class SegmentationMap:
    """Class-id raster with values in 0..12."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.size == 0:
            raise SchemaError(f"segmentation must be a non-empty 2-D raster, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise SchemaError("segmentation values must be integers")
        arr = arr.astype(np.int64)
        bad = (arr < 0) | (arr > NUM_CLASSES)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise SchemaError(
                f"pixel ({r}, {c}) has class id {arr[r, c]} outside 0..{NUM_CLASSES}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def present_classes(self) -> list[int]:
        return [int(c) for c in np.unique(self.data) if c != VOID]

    def pixel_counts(self) -> np.ndarray:
        """Counts indexed by class id, length 13 (index 0 = void)."""
        return np.bincount(self.data.ravel(), minlength=NUM_CLASSES + 1)


def class_mask(seg: SegmentationMap, class_id: int) -> tuple[np.ndarray, int]:
    """Binary mask of ``class_id`` and its pixel count N_i."""
    class_name(class_id)
    mask = seg.data == class_id
    return mask, int(mask.sum())


def remap_classes(raw: np.ndarray, table: Mapping[int, int]) -> np.ndarray:
    """Translate source-taxonomy ids; ids missing from ``table`` become void."""
    raw = np.asarray(raw, dtype=np.int64)
    if raw.size == 0:
        return raw.copy()
    lut = np.zeros(max(int(raw.max()), max(table, default=0)) + 1, dtype=np.int64)
    for src, dst in table.items():
        if dst != VOID:
            class_name(dst)
        lut[int(src)] = int(dst)
    return lut[raw]


def load_remap_table(path: str | Path) -> dict[int, int]:
    """Two-column CSV ``source_id,target`` (target as id or class name)."""
    table = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or not row[0].strip().isdigit():
                continue
            target = row[1].strip()
            table[int(row[0])] = VOID if target in ("0", "void") else parse_class(target)
    return table


def load_segmentation(
    path: str | Path,
    expected_dims: tuple[int, int] | None = None,
    remap: Mapping[int, int] | None = None,
) -> SegmentationMap:
    """Read and validate a class-id PNG.

    Raises:
        SchemaError: unknown class id (the message names the pixel).
        ValueError: dimensions differ from ``expected_dims``.
    """
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "I", "I;16"):
            raise SchemaError(f"{path}: expected a single-channel raster, got mode {img.mode}")
        raw = np.asarray(img, dtype=np.int64)
    if remap is not None:
        raw = remap_classes(raw, remap)
    if expected_dims is not None and raw.shape != tuple(expected_dims):
        raise ValueError(
            f"{path}: segmentation is {raw.shape[0]}x{raw.shape[1]}, "
            f"expected {expected_dims[0]}x{expected_dims[1]}"
        )
    return SegmentationMap(raw)


def save_segmentation(seg: SegmentationMap | np.ndarray, path: str | Path) -> None:
    data = seg.data if isinstance(seg, SegmentationMap) else SegmentationMap(seg).data
    from .raster import write_png

    write_png(Image.fromarray(data.astype(np.uint8), mode="L"), path)
