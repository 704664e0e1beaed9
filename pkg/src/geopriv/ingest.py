"""Input parsing and validation: GPS traces, population block groups,
consent zones, age sidecars, and synthesized residential points.

Malformed trace rows are collected into an error report rather than
dropped, so a run can always account for every input row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import (
    InvalidPolygonError,
    MissingHeaderError,
    MissingPropertyError,
    MissingRadiusError,
    NonPositiveDensityError,
    RowParseError,
    UnknownLabelError,
)
from .geo import Circle, GeoPoint, LocalFrame, LocalXY, MultiPolygon, Polygon

TRACE_HEADER = ["user_id", "timestamp", "lat", "lon"]
ZONE_LABELS = frozenset({"private", "public", "danger"})


@dataclass(frozen=True)
class TraceRecord:
    """One timestamped observation of one user."""

    user_id: str
    timestamp: datetime
    point: GeoPoint


@dataclass(frozen=True)
class BlockGroup:
    """Census-style polygon with total and per-age-bracket densities (persons/km^2)."""

    id: str
    boundary: Polygon | MultiPolygon
    total_density: float
    age_densities: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.total_density) and self.total_density > 0):
            raise NonPositiveDensityError(
                f"block group {self.id!r}: total_density must be > 0, got {self.total_density}"
            )
        for bracket, d in self.age_densities.items():
            if not (math.isfinite(d) and d >= 0):
                raise NonPositiveDensityError(
                    f"block group {self.id!r}: age density for {bracket!r} must be >= 0, got {d}"
                )


@dataclass(frozen=True)
class Zone:
    zone_id: str
    geometry: Polygon | MultiPolygon | Circle
    label: str

    def contains(self, p: GeoPoint) -> bool:
        return self.geometry.contains(p)


@dataclass(frozen=True)
class ZoneSet:
    zones: tuple[Zone, ...] = ()

    def with_label(self, label: str) -> tuple[Zone, ...]:
        return tuple(z for z in self.zones if z.label == label)

    @property
    def private_zones(self) -> tuple[Zone, ...]:
        return self.with_label("private")

    @property
    def danger_zones(self) -> tuple[Zone, ...]:
        return self.with_label("danger")


class PopulationDataset:
    """Block groups plus dataset-wide area-weighted average densities.

    The averages are recomputed from the block groups at construction,
    never trusted from the input file. Areas come from the planar
    shoelace on each group's local frame.
    """

    def __init__(self, block_groups: list[BlockGroup]):
        if not block_groups:
            raise ValueError("population dataset needs at least one block group")
        ids = [bg.id for bg in block_groups]
        if len(set(ids)) != len(ids):
            raise ValueError("block group ids must be unique")
        self.block_groups = list(block_groups)
        self._by_id = {bg.id: bg for bg in self.block_groups}
        self._sorted = sorted(self.block_groups, key=lambda bg: bg.id)
        self.areas_km2 = {bg.id: bg.boundary.area_km2() for bg in self.block_groups}
        self._bounds = {bg.id: bg.boundary.bounds() for bg in self.block_groups}
        total_area = sum(self.areas_km2.values())
        self.average_total_density = (
            sum(bg.total_density * self.areas_km2[bg.id] for bg in self.block_groups) / total_area
        )
        self.brackets = sorted({b for bg in self.block_groups for b in bg.age_densities})
        self.average_age_density = {
            b: sum(bg.age_densities.get(b, 0.0) * self.areas_km2[bg.id] for bg in self.block_groups)
            / total_area
            for b in self.brackets
        }

    def __len__(self) -> int:
        return len(self.block_groups)

    def __getitem__(self, bg_id: str) -> BlockGroup:
        return self._by_id[bg_id]

    def bounds(self) -> tuple[float, float, float, float]:
        bs = list(self._bounds.values())
        return (
            min(b[0] for b in bs),
            min(b[1] for b in bs),
            max(b[2] for b in bs),
            max(b[3] for b in bs),
        )

    def frame(self) -> LocalFrame:
        min_lat, min_lon, max_lat, max_lon = self.bounds()
        return LocalFrame(GeoPoint((min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0))

    def find_block_group(self, p: GeoPoint) -> BlockGroup | None:
        """Containing block group; on shared boundaries the lowest id wins."""
        for bg in self._sorted:
            min_lat, min_lon, max_lat, max_lon = self._bounds[bg.id]
            if not (min_lat <= p.lat_deg <= max_lat and min_lon <= p.lon_deg <= max_lon):
                continue
            if bg.boundary.contains(p):
                return bg
        return None


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 to an aware UTC datetime; naive inputs are taken as UTC."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _open_text(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", encoding="utf-8", newline=""), True


def parse_traces(source) -> tuple[list[TraceRecord], list[RowParseError]]:
    """Read a trace CSV (header user_id,timestamp,lat,lon).

    Returns (records, errors); len(records) + len(errors) equals the
    number of data rows, so nothing is silently dropped. Extra columns
    beyond the required four are ignored.
    """
    fh, should_close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingHeaderError("trace file is empty (no header)")
        if [h.strip() for h in header[: len(TRACE_HEADER)]] != TRACE_HEADER:
            raise MissingHeaderError(
                f"expected header starting with {','.join(TRACE_HEADER)!r}, got {','.join(header)!r}"
            )
        records: list[TraceRecord] = []
        errors: list[RowParseError] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < 4:
                    raise ValueError(f"expected at least 4 fields, got {len(row)}")
                user_id = row[0].strip()
                if not user_id:
                    raise ValueError("empty user_id")
                ts = parse_timestamp(row[1])
                point = GeoPoint(float(row[2]), float(row[3]))
                records.append(TraceRecord(user_id, ts, point))
            except (ValueError, OverflowError) as exc:
                errors.append(RowParseError(line_no, str(exc)))
        return records, errors
    finally:
        if should_close:
            fh.close()


def write_traces_csv(records: list[TraceRecord], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for r in records:
        writer.writerow([r.user_id, format_timestamp(r.timestamp), repr(r.point.lat_deg), repr(r.point.lon_deg)])


def _ring_from_coords(coords) -> tuple[GeoPoint, ...]:
    try:
        return tuple(GeoPoint(lat, lon) for lon, lat in coords)
    except (TypeError, ValueError) as exc:
        raise InvalidPolygonError(f"bad ring coordinates: {exc}") from exc


def _geometry_from_geojson(geom: dict) -> Polygon | MultiPolygon:
    gtype = geom.get("type")
    coords = geom.get("coordinates")
    if gtype == "Polygon":
        rings = [_ring_from_coords(r) for r in coords]
        return Polygon(rings[0], holes=tuple(rings[1:]))
    if gtype == "MultiPolygon":
        parts = []
        for part in coords:
            rings = [_ring_from_coords(r) for r in part]
            parts.append(Polygon(rings[0], holes=tuple(rings[1:])))
        return MultiPolygon(tuple(parts))
    raise InvalidPolygonError(f"unsupported geometry type {gtype!r}")


def _feature_id(feature: dict, fallback: str) -> str:
    props = feature.get("properties") or {}
    for candidate in (props.get("id"), feature.get("id")):
        if candidate is not None:
            return str(candidate)
    return fallback


def parse_population(source) -> PopulationDataset:
    """Load a GeoJSON FeatureCollection of block groups.

    Each feature needs Polygon/MultiPolygon geometry and properties
    ``id``, ``total_density`` (> 0), and an ``age_density`` object.
    """
    fh, should_close = _open_text(source)
    try:
        doc = json.load(fh)
    finally:
        if should_close:
            fh.close()
    features = doc.get("features")
    if doc.get("type") != "FeatureCollection" or features is None:
        raise MissingPropertyError("population file is not a GeoJSON FeatureCollection")
    groups = []
    for i, feature in enumerate(features):
        props = feature.get("properties") or {}
        bg_id = _feature_id(feature, f"bg{i}")
        if "total_density" not in props:
            raise MissingPropertyError(f"block group {bg_id!r}: missing total_density")
        if "age_density" not in props:
            raise MissingPropertyError(f"block group {bg_id!r}: missing age_density object")
        age = props["age_density"]
        if not isinstance(age, dict):
            raise MissingPropertyError(f"block group {bg_id!r}: age_density must be an object")
        geometry = feature.get("geometry")
        if geometry is None:
            raise MissingPropertyError(f"block group {bg_id!r}: missing geometry")
        boundary = _geometry_from_geojson(geometry)
        groups.append(
            BlockGroup(
                id=bg_id,
                boundary=boundary,
                total_density=float(props["total_density"]),
                age_densities={str(k): float(v) for k, v in age.items()},
            )
        )
    return PopulationDataset(groups)


def parse_zones(source) -> ZoneSet:
    """Load consent/danger zones from GeoJSON.

    Polygon/MultiPolygon features become polygon zones; Point features
    need a ``radius_m`` property and become circles. Every feature needs
    a ``label`` in {private, public, danger}.
    """
    fh, should_close = _open_text(source)
    try:
        doc = json.load(fh)
    finally:
        if should_close:
            fh.close()
    features = doc.get("features")
    if doc.get("type") != "FeatureCollection" or features is None:
        raise MissingPropertyError("zone file is not a GeoJSON FeatureCollection")
    zones = []
    for i, feature in enumerate(features):
        props = feature.get("properties") or {}
        zone_id = _feature_id(feature, f"zone{i}")
        label = props.get("label")
        if label is None:
            raise MissingPropertyError(f"zone {zone_id!r}: missing label")
        if label not in ZONE_LABELS:
            raise UnknownLabelError(
                f"zone {zone_id!r}: label {label!r} not in {sorted(ZONE_LABELS)}"
            )
        geometry = feature.get("geometry") or {}
        if geometry.get("type") == "Point":
            if "radius_m" not in props:
                raise MissingRadiusError(f"zone {zone_id!r}: Point feature without radius_m")
            lon, lat = geometry["coordinates"][:2]
            geom = Circle(GeoPoint(lat, lon), float(props["radius_m"]))
        else:
            geom = _geometry_from_geojson(geometry)
        zones.append(Zone(zone_id, geom, label))
    return ZoneSet(tuple(zones))


def parse_age_sidecar(source) -> dict[str, str]:
    """Read the optional user_id,bracket sidecar CSV."""
    fh, should_close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingHeaderError("age sidecar is empty (no header)")
        if [h.strip() for h in header[:2]] != ["user_id", "bracket"]:
            raise MissingHeaderError("age sidecar header must be user_id,bracket")
        out = {}
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            out[row[0].strip()] = row[1].strip()
        return out
    finally:
        if should_close:
            fh.close()


def sample_residential_points(
    pop: PopulationDataset, persons_per_point: float, seed: int
) -> list[tuple[str, GeoPoint]]:
    """Synthesize candidate residential locations from density.

    Each block group gets round(total_density * area_km2 / persons_per_point)
    points placed uniformly inside its boundary by rejection sampling in the
    group's planar bounding box. Same inputs and seed give identical output.
    """
    if persons_per_point < 1:
        raise ValueError("persons_per_point must be >= 1")
    out: list[tuple[str, GeoPoint]] = []
    for bg_index, bg in enumerate(pop.block_groups):
        n = round(bg.total_density * pop.areas_km2[bg.id] / persons_per_point)
        if n <= 0:
            continue
        rng = np.random.default_rng((seed, bg_index))
        frame = bg.boundary.frame()
        min_lat, min_lon, max_lat, max_lon = bg.boundary.bounds()
        lo = frame.project(GeoPoint(min_lat, min_lon))
        hi = frame.project(GeoPoint(max_lat, max_lon))
        placed = 0
        attempts = 0
        budget = 10_000 * n + 1000
        while placed < n:
            attempts += 1
            if attempts > budget:
                raise RuntimeError(
                    f"block group {bg.id!r}: rejection sampling exceeded {budget} attempts"
                )
            x = rng.uniform(lo.x, hi.x)
            y = rng.uniform(lo.y, hi.y)
            p = frame.unproject(LocalXY(x, y))
            if bg.boundary.contains(p):
                out.append((f"{bg.id}-h{placed}", p))
                placed += 1
    return out


def read_homes_csv(source) -> list[tuple[str, GeoPoint]]:
    """Read residential points from a CSV with header id,lat,lon."""
    fh, should_close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingHeaderError("homes file is empty (no header)")
        if [h.strip() for h in header[:3]] != ["id", "lat", "lon"]:
            raise MissingHeaderError("homes header must be id,lat,lon")
        out = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            out.append((row[0].strip(), GeoPoint(float(row[1]), float(row[2]))))
        return out
    finally:
        if should_close:
            fh.close()


def write_homes_csv(homes: list[tuple[str, GeoPoint]], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["id", "lat", "lon"])
    for hid, p in homes:
        writer.writerow([hid, repr(p.lat_deg), repr(p.lon_deg)])
