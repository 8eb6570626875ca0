"""GeoJSON export and grid aggregation of per-image results."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import jsonschema

from .ranking import FactorRanking


class GeoError(ValueError):
    pass


# Strict subset of RFC 7946 for what the emitter produces: a FeatureCollection
# of Point features with 2-element [lon, lat] positions.
POINT_COLLECTION_SCHEMA = {
    "type": "object",
    "required": ["type", "features"],
    "properties": {
        "type": {"const": "FeatureCollection"},
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "geometry", "properties"],
                "properties": {
                    "type": {"const": "Feature"},
                    "id": {"type": ["string", "number"]},
                    "geometry": {
                        "type": "object",
                        "required": ["type", "coordinates"],
                        "additionalProperties": False,
                        "properties": {
                            "type": {"const": "Point"},
                            "coordinates": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "prefixItems": [
                                    {"type": "number", "minimum": -180, "maximum": 180},
                                    {"type": "number", "minimum": -90, "maximum": 90},
                                ],
                            },
                        },
                    },
                    "properties": {
                        "type": "object",
                        "required": ["upd", "p_upd", "factors", "densities"],
                        "properties": {
                            "upd": {"type": "boolean"},
                            "p_upd": {"type": "number", "minimum": 0, "maximum": 1},
                            "factors": {"type": "array", "items": {"type": "string"}},
                            "densities": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class StudyRecord:
    image_id: str
    lat: float
    lon: float
    label: int
    p_upd: float
    ranking: FactorRanking = field(default_factory=lambda: FactorRanking(""))

    def validate(self) -> None:
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise GeoError(f"{self.image_id}: latitude {self.lat} outside [-90, 90]")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise GeoError(f"{self.image_id}: longitude {self.lon} outside [-180, 180]")
        if not 0.0 <= self.p_upd <= 1.0:
            raise GeoError(f"{self.image_id}: probability {self.p_upd} outside [0, 1]")
        if self.label not in (0, 1):
            raise GeoError(f"{self.image_id}: label must be 0 or 1")


def record_feature(rec: StudyRecord, top_k: int = 4) -> dict:
    rec.validate()
    entries = rec.ranking.entries[:top_k]
    return {
        "type": "Feature",
        "id": rec.image_id,
        "geometry": {"type": "Point", "coordinates": [rec.lon, rec.lat]},
        "properties": {
            "image_id": rec.image_id,
            "upd": bool(rec.label == 1),
            "p_upd": rec.p_upd,
            "factors": [e.class_name for e in entries],
            "densities": [e.density for e in entries],
        },
    }


def emit_geojson(records: Iterable[StudyRecord], top_k: int = 4, errors: list | None = None) -> dict:
    """One Point feature per record, in input order.

    Records with out-of-range coordinates or probabilities are rejected:
    appended to ``errors`` as ``(image_id, message)`` when a list is given,
    raised as GeoError otherwise.
    """
    features = []
    for rec in records:
        try:
            features.append(record_feature(rec, top_k))
        except GeoError as exc:
            if errors is None:
                raise
            errors.append((rec.image_id, str(exc)))
    return {"type": "FeatureCollection", "features": features}


def validate_geojson(doc: dict) -> None:
    """Raise jsonschema.ValidationError unless ``doc`` is a valid point collection."""
    jsonschema.Draft202012Validator(POINT_COLLECTION_SCHEMA).validate(doc)


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


@dataclass(frozen=True)
class GridCell:
    cell_lat: int
    cell_lon: int
    count: int
    upd_count: int

    @property
    def upd_rate(self) -> float:
        return self.upd_count / self.count


def grid_aggregate(records: Sequence[StudyRecord], cell_size: float) -> list[GridCell]:
    """Count records and disorder fraction per ``cell_size``-degree cell.

    Cells are keyed by (floor(lat / cell), floor(lon / cell)); cells with no
    records are absent. Output is sorted by key.
    """
    if not cell_size > 0:
        raise GeoError("cell_size must be positive")
    counts: dict[tuple[int, int], list[int]] = {}
    for rec in records:
        rec.validate()
        key = (math.floor(rec.lat / cell_size), math.floor(rec.lon / cell_size))
        slot = counts.setdefault(key, [0, 0])
        slot[0] += 1
        slot[1] += int(rec.label == 1)
    return [GridCell(k[0], k[1], n, u) for k, (n, u) in sorted(counts.items())]
