"""Atomic file output and the image manifest."""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .segmentation import parse_class


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass(frozen=True)
class ManifestRow:
    """One manifest line binding an image to its segmentation raster.

    Required column: ``image_path``. Optional: ``segmentation_path``,
    ``gt_ranking`` (semicolon-separated class ids or names, most
    contributing first), ``lat``, ``lon``, ``morphology`` (bin name or
    ratio), ``image_id`` (defaults to the image file stem) and ``label``.
    Relative paths resolve against the manifest's directory.
    """

    image_id: str
    image_path: Path
    segmentation_path: Path | None = None
    gt_ranking: tuple[int, ...] | None = None
    lat: float | None = None
    lon: float | None = None
    morphology: str | None = None
    label: int | None = None


class ManifestError(ValueError):
    pass


def _opt(row: dict, key: str) -> str | None:
    value = row.get(key)
    if value is None:
        return None
    value = value.strip()
    return value or None


def parse_ranking(text: str) -> tuple[int, ...]:
    return tuple(parse_class(tok) for tok in text.split(";") if tok.strip())


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        if "image_path" not in reader.fieldnames:
            raise ManifestError(f"{path}: missing required column 'image_path'")
        for lineno, row in enumerate(reader, start=2):
            image = _opt(row, "image_path")
            if image is None:
                raise ManifestError(f"{path}:{lineno}: empty image_path")
            seg = _opt(row, "segmentation_path")
            gt = _opt(row, "gt_ranking")
            lat, lon, label = _opt(row, "lat"), _opt(row, "lon"), _opt(row, "label")
            try:
                rows.append(ManifestRow(
                    image_id=_opt(row, "image_id") or Path(image).stem,
                    image_path=base / image,
                    segmentation_path=base / seg if seg else None,
                    gt_ranking=parse_ranking(gt) if gt else None,
                    lat=float(lat) if lat is not None else None,
                    lon=float(lon) if lon is not None else None,
                    morphology=_opt(row, "morphology"),
                    label=int(label) if label is not None else None,
                ))
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    ids = [r.image_id for r in rows]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate image ids")
    return rows
