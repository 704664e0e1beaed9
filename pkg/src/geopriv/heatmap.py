"""Heat-map aggregation over a metric grid.

Two modes: a single user's own travel history (private zones redacted),
and a multi-user map where cells seen by fewer than k_min distinct users
are suppressed before anything is emitted. Visible cells are classified
into three intensity classes by visit-count tertiles, ties leaning
toward the hotter class.

The map keeps its per-cell user/visit breakdown internally so coarsening
can recompute distinct-user counts instead of double counting.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .errors import EmptyMapError, MultipleUsersError, OutOfFrameError
from .geo import GeoPoint, LocalFrame, LocalXY
from .ingest import TraceRecord, ZoneSet, format_timestamp
from .mask import redact

CLASS_HOT = "red-orange"
CLASS_MID = "green"
CLASS_COLD = "blue"
CLASS_SUPPRESSED = "suppressed"


@dataclass(frozen=True)
class GridSpec:
    """Uniform metric grid anchored at its southwest corner."""

    origin: GeoPoint
    cell_size_m: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ValueError("cell_size_m must be > 0")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid extent must be at least 1x1")
        frame = LocalFrame(self.origin)
        far = frame.unproject(
            LocalXY(self.cols * self.cell_size_m, self.rows * self.cell_size_m)
        )
        frame.project(far)  # raises OutOfFrameError when the extent exceeds the frame

    def frame(self) -> LocalFrame:
        return LocalFrame(self.origin)

    def cell_of(self, p: GeoPoint) -> tuple[int, int] | None:
        """(row, col) for a point, or None when out of extent.

        Cells are half-open in both axes, so every in-extent point maps
        to exactly one cell.
        """
        try:
            xy = self.frame().project(p)
        except OutOfFrameError:
            return None
        col = math.floor(xy.x / self.cell_size_m)
        row = math.floor(xy.y / self.cell_size_m)
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return row, col
        return None

    def cell_ring(self, row: int, col: int) -> list[GeoPoint]:
        """Closed lon/lat ring of a cell boundary (5 points)."""
        frame = self.frame()
        s = self.cell_size_m
        corners = [
            (col * s, row * s),
            ((col + 1) * s, row * s),
            ((col + 1) * s, (row + 1) * s),
            (col * s, (row + 1) * s),
            (col * s, row * s),
        ]
        return [frame.unproject(LocalXY(x, y)) for x, y in corners]

    @classmethod
    def cover(cls, bounds: tuple[float, float, float, float], cell_size_m: float) -> "GridSpec":
        """Smallest grid covering (min_lat, min_lon, max_lat, max_lon)."""
        min_lat, min_lon, max_lat, max_lon = bounds
        origin = GeoPoint(min_lat, min_lon)
        frame = LocalFrame(origin)
        far = frame.project(GeoPoint(max_lat, max_lon))
        cols = max(1, math.ceil(far.x / cell_size_m + 1e-9))
        rows = max(1, math.ceil(far.y / cell_size_m + 1e-9))
        return cls(origin, cell_size_m, rows, cols)


@dataclass(frozen=True)
class HeatCell:
    row: int
    col: int
    visit_count: int
    distinct_users: int
    cls: str | None = None


@dataclass(frozen=True)
class HeatMap:
    spec: GridSpec
    mode: str  # single-user | multi-user
    k_min: int = 1
    # (row, col) -> user_id -> visits; the full aggregation before suppression
    cell_users: dict[tuple[int, int], dict[str, int]] = field(default_factory=dict)
    classified: bool = False

    def total_visits(self) -> int:
        """All aggregated in-extent visits, suppressed cells included."""
        return sum(sum(u.values()) for u in self.cell_users.values())

    def is_suppressed(self, key: tuple[int, int]) -> bool:
        return self.mode == "multi-user" and len(self.cell_users[key]) < self.k_min

    def cells(self) -> dict[tuple[int, int], HeatCell]:
        """Emitted view: suppressed cells carry no counts, visible cells
        carry classes once classified."""
        out = {}
        visible_classes = _classify_counts(
            {k: sum(u.values()) for k, u in self.cell_users.items() if not self.is_suppressed(k)}
        ) if self.classified else {}
        for key, users in sorted(self.cell_users.items()):
            if self.is_suppressed(key):
                out[key] = HeatCell(key[0], key[1], 0, 0, CLASS_SUPPRESSED)
            else:
                out[key] = HeatCell(
                    key[0],
                    key[1],
                    sum(users.values()),
                    len(users),
                    visible_classes.get(key),
                )
        return out

    def visible_cells(self) -> dict[tuple[int, int], HeatCell]:
        return {k: c for k, c in self.cells().items() if c.cls != CLASS_SUPPRESSED}


def _classify_counts(counts: dict[tuple[int, int], int]) -> dict[tuple[int, int], str]:
    """Tertile classes from the multiset of visit counts.

    A cell's class depends only on its count and the count multiset, so
    permuting equal-count cells never changes the result. The highest
    rank of a count value decides its tertile, which breaks ties toward
    the hotter class.
    """
    if not counts:
        return {}
    values = sorted(counts.values())
    n = len(values)
    out = {}
    for key, v in counts.items():
        rank_max = bisect.bisect_right(values, v)
        if 3 * rank_max > 2 * n:
            out[key] = CLASS_HOT
        elif 3 * rank_max > n:
            out[key] = CLASS_MID
        else:
            out[key] = CLASS_COLD
    return out


def retention_filter(
    records: list[TraceRecord], now: datetime, window_days: int
) -> list[TraceRecord]:
    """Keep records no older than window_days (boundary inclusive)."""
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    cutoff = timedelta(days=window_days)
    return [r for r in records if now - r.timestamp <= cutoff]


def _aggregate(records: list[TraceRecord], spec: GridSpec) -> dict[tuple[int, int], dict[str, int]]:
    cell_users: dict[tuple[int, int], dict[str, int]] = {}
    for rec in records:
        key = spec.cell_of(rec.point)
        if key is None:
            continue
        users = cell_users.setdefault(key, {})
        users[rec.user_id] = users.get(rec.user_id, 0) + 1
    return cell_users


def aggregate_single(
    records: list[TraceRecord], spec: GridSpec, zones: ZoneSet | None = None
) -> HeatMap:
    """One user's heat map; records inside private zones are excluded."""
    users = {r.user_id for r in records}
    if len(users) > 1:
        raise MultipleUsersError(f"expected one user, got {sorted(users)}")
    kept, _ = redact(records, zones)
    return HeatMap(spec, "single-user", k_min=1, cell_users=_aggregate(kept, spec))


def aggregate_multi(
    records: list[TraceRecord],
    spec: GridSpec,
    k_min: int,
    zones: ZoneSet | None = None,
) -> HeatMap:
    """Everyone's combined map; cells below k_min distinct users are
    suppressed, the rest classified."""
    if k_min < 1:
        raise ValueError("k_min must be >= 1")
    kept, _ = redact(records, zones)
    hm = HeatMap(spec, "multi-user", k_min=k_min, cell_users=_aggregate(kept, spec))
    if any(not hm.is_suppressed(k) for k in hm.cell_users):
        return classify(hm)
    return hm


def classify(hm: HeatMap) -> HeatMap:
    """Assign tertile classes to the visible cells."""
    if not any(not hm.is_suppressed(k) for k in hm.cell_users):
        raise EmptyMapError("no visible cells to classify")
    return HeatMap(hm.spec, hm.mode, hm.k_min, hm.cell_users, classified=True)


def coarsen(hm: HeatMap, factor: int) -> HeatMap:
    """Merge factor x factor blocks; distinct users recomputed from the
    underlying per-user assignment, never summed."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return hm
    spec = hm.spec
    new_spec = GridSpec(
        spec.origin,
        spec.cell_size_m * factor,
        math.ceil(spec.rows / factor),
        math.ceil(spec.cols / factor),
    )
    merged: dict[tuple[int, int], dict[str, int]] = {}
    for (row, col), users in hm.cell_users.items():
        key = (row // factor, col // factor)
        bucket = merged.setdefault(key, {})
        for user, n in users.items():
            bucket[user] = bucket.get(user, 0) + n
    out = HeatMap(new_spec, hm.mode, hm.k_min, merged, classified=False)
    if hm.classified and any(not out.is_suppressed(k) for k in out.cell_users):
        return classify(out)
    return out


@dataclass(frozen=True)
class DangerAlert:
    zone_id: str
    user_id: str
    timestamp: datetime


def danger_overlay(records: list[TraceRecord], zones: ZoneSet | None) -> list[DangerAlert]:
    """One alert per record inside a danger zone, chronologically ordered."""
    if zones is None:
        return []
    alerts = [
        DangerAlert(z.zone_id, r.user_id, r.timestamp)
        for r in records
        for z in zones.danger_zones
        if z.contains(r.point)
    ]
    alerts.sort(key=lambda a: (a.timestamp, a.zone_id, a.user_id))
    return alerts


def write_alerts_csv(alerts: list[DangerAlert], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["zone_id", "user_id", "timestamp"])
    for a in alerts:
        writer.writerow([a.zone_id, a.user_id, format_timestamp(a.timestamp)])


def heatmap_to_geojson(hm: HeatMap) -> dict:
    """FeatureCollection of visible cell polygons; suppressed cells are
    omitted entirely. distinct_users appears only on multi-user maps."""
    features = []
    for (row, col), cell in sorted(hm.cells().items()):
        if cell.cls == CLASS_SUPPRESSED:
            continue
        ring = [[p.lon_deg, p.lat_deg] for p in hm.spec.cell_ring(row, col)]
        props = {"visit_count": cell.visit_count, "class": cell.cls}
        if hm.mode == "multi-user":
            props["distinct_users"] = cell.distinct_users
        features.append(
            {
                "type": "Feature",
                "id": f"r{row}c{col}",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def heatmap_geojson_str(hm: HeatMap) -> str:
    return json.dumps(heatmap_to_geojson(hm), indent=2, sort_keys=True)
