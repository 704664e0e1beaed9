"""Geodesy primitives: great-circle distance, a local planar projection,
polygon containment, and a radius-queryable point index.

All distances are meters on a sphere of radius 6,371,000 m. Planar math
happens in per-dataset local frames limited to +/- 1 degree, where an
equirectangular projection is accurate to well under a meter per kilometer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateIdError, InvalidPolygonError, OutOfFrameError

EARTH_RADIUS_M = 6_371_000.0

# Local frames wider than this are rejected rather than silently distorted.
FRAME_HALF_WIDTH_DEG = 1.0

# Frames this close to a pole would make the equirectangular east-west
# scale factor degenerate.
MAX_FRAME_ORIGIN_LAT_DEG = 89.0

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate in degrees."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        object.__setattr__(self, "lat_deg", float(self.lat_deg))
        object.__setattr__(self, "lon_deg", float(self.lon_deg))
        if not (math.isfinite(self.lat_deg) and math.isfinite(self.lon_deg)):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise ValueError(f"longitude {self.lon_deg} outside [-180, 180]")


@dataclass(frozen=True)
class LocalXY:
    """Planar offset in meters east (x) and north (y) of a frame origin."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("planar offsets must be finite")

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    phi1 = a.lat_deg * _DEG
    phi2 = b.lat_deg * _DEG
    dphi = (b.lat_deg - a.lat_deg) * _DEG
    dlam = (b.lon_deg - a.lon_deg) * _DEG
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular projection centered on ``origin``.

    Valid for points within one degree of the origin in both axes; the
    east-west scale is fixed at cos(origin latitude).
    """

    origin: GeoPoint

    def __post_init__(self):
        if abs(self.origin.lat_deg) > MAX_FRAME_ORIGIN_LAT_DEG:
            raise ValueError("frame origin too close to a pole for planar projection")

    def project(self, p: GeoPoint) -> LocalXY:
        """Map a point into frame meters. Raises OutOfFrameError beyond 1 degree."""
        dlat = p.lat_deg - self.origin.lat_deg
        dlon = p.lon_deg - self.origin.lon_deg
        if abs(dlat) > FRAME_HALF_WIDTH_DEG or abs(dlon) > FRAME_HALF_WIDTH_DEG:
            raise OutOfFrameError(
                f"point ({p.lat_deg}, {p.lon_deg}) outside the 1-degree frame at "
                f"({self.origin.lat_deg}, {self.origin.lon_deg})"
            )
        x = EARTH_RADIUS_M * math.cos(self.origin.lat_deg * _DEG) * dlon * _DEG
        y = EARTH_RADIUS_M * dlat * _DEG
        return LocalXY(x, y)

    def unproject(self, xy: LocalXY) -> GeoPoint:
        """Inverse of :meth:`project`. Longitude wraps at the antimeridian."""
        lat = self.origin.lat_deg + xy.y / EARTH_RADIUS_M / _DEG
        lon = self.origin.lon_deg + xy.x / (
            EARTH_RADIUS_M * math.cos(self.origin.lat_deg * _DEG)
        ) / _DEG
        if lon > 180.0 or lon < -180.0:
            lon = (lon + 180.0) % 360.0 - 180.0
        return GeoPoint(lat, lon)


def _close_ring(vertices) -> tuple[GeoPoint, ...]:
    ring = tuple(vertices)
    if len(ring) < 3:
        raise InvalidPolygonError("ring needs at least 3 vertices")
    if ring[0] != ring[-1]:
        ring = ring + (ring[0],)
    if len(set((p.lat_deg, p.lon_deg) for p in ring[:-1])) < 3:
        raise InvalidPolygonError("ring needs at least 3 distinct vertices")
    return ring


def _segments_cross(a1, a2, b1, b2) -> bool:
    """Proper crossing test; shared endpoints do not count."""

    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    o1 = orient(a1, a2, b1)
    o2 = orient(a1, a2, b2)
    o3 = orient(b1, b2, a1)
    o4 = orient(b1, b2, a2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _validate_ring(ring: tuple[GeoPoint, ...]):
    pts = [(p.lon_deg, p.lat_deg) for p in ring[:-1]]
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share an endpoint
            if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                raise InvalidPolygonError(f"ring self-intersects between edges {i} and {j}")


def _point_on_segment(px, py, ax, ay, bx, by) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if cross != 0.0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _ring_contains(ring: tuple[GeoPoint, ...], p: GeoPoint) -> bool:
    """Even-odd ray casting in lon/lat space; boundary counts as inside."""
    px, py = p.lon_deg, p.lat_deg
    inside = False
    for i in range(len(ring) - 1):
        ax, ay = ring[i].lon_deg, ring[i].lat_deg
        bx, by = ring[i + 1].lon_deg, ring[i + 1].lat_deg
        if _point_on_segment(px, py, ax, ay, bx, by):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def _ring_boundary_contains(ring: tuple[GeoPoint, ...], p: GeoPoint) -> bool:
    px, py = p.lon_deg, p.lat_deg
    return any(
        _point_on_segment(
            px, py, ring[i].lon_deg, ring[i].lat_deg, ring[i + 1].lon_deg, ring[i + 1].lat_deg
        )
        for i in range(len(ring) - 1)
    )


@dataclass(frozen=True)
class Polygon:
    """A closed exterior ring with optional interior holes.

    Rings are normalized so the first vertex equals the last, and are
    rejected if self-intersecting. Edges are straight lines in lon/lat
    space, matching the equirectangular planar model.
    """

    exterior: tuple[GeoPoint, ...]
    holes: tuple[tuple[GeoPoint, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "exterior", _close_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_close_ring(h) for h in self.holes))
        _validate_ring(self.exterior)
        for h in self.holes:
            _validate_ring(h)

    def contains(self, p: GeoPoint) -> bool:
        """Boundary-inclusive containment (any ring's boundary counts as inside)."""
        if not _ring_contains(self.exterior, p):
            return False
        for hole in self.holes:
            if _ring_boundary_contains(hole, p):
                return True
            if _ring_contains(hole, p):
                return False
        return True

    def bounds(self) -> tuple[float, float, float, float]:
        """(min_lat, min_lon, max_lat, max_lon) of the exterior ring."""
        lats = [p.lat_deg for p in self.exterior]
        lons = [p.lon_deg for p in self.exterior]
        return min(lats), min(lons), max(lats), max(lons)

    def frame(self) -> LocalFrame:
        """Local frame centered on the bounding-box midpoint."""
        min_lat, min_lon, max_lat, max_lon = self.bounds()
        return LocalFrame(GeoPoint((min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0))

    def area_m2(self, frame: LocalFrame | None = None) -> float:
        """Planar shoelace area on the local projection, minus holes."""
        frame = frame or self.frame()

        def ring_area(ring):
            xy = [frame.project(p) for p in ring]
            s = 0.0
            for i in range(len(xy) - 1):
                s += xy[i].x * xy[i + 1].y - xy[i + 1].x * xy[i].y
            return abs(s) / 2.0

        return ring_area(self.exterior) - sum(ring_area(h) for h in self.holes)

    def area_km2(self, frame: LocalFrame | None = None) -> float:
        return self.area_m2(frame) / 1e6


@dataclass(frozen=True)
class MultiPolygon:
    """Union of disjoint polygons; containment is any-part, area is the sum."""

    parts: tuple[Polygon, ...]

    def __post_init__(self):
        if not self.parts:
            raise InvalidPolygonError("multipolygon needs at least one part")

    def contains(self, p: GeoPoint) -> bool:
        return any(part.contains(p) for part in self.parts)

    def bounds(self) -> tuple[float, float, float, float]:
        bs = [part.bounds() for part in self.parts]
        return (
            min(b[0] for b in bs),
            min(b[1] for b in bs),
            max(b[2] for b in bs),
            max(b[3] for b in bs),
        )

    def frame(self) -> LocalFrame:
        min_lat, min_lon, max_lat, max_lon = self.bounds()
        return LocalFrame(GeoPoint((min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0))

    def area_m2(self, frame: LocalFrame | None = None) -> float:
        return sum(part.area_m2(frame) for part in self.parts)

    def area_km2(self, frame: LocalFrame | None = None) -> float:
        return self.area_m2(frame) / 1e6


@dataclass(frozen=True)
class Circle:
    """A great-circle disk; boundary-inclusive like polygons."""

    center: GeoPoint
    radius_m: float

    def __post_init__(self):
        if not (math.isfinite(self.radius_m) and self.radius_m >= 0.0):
            raise ValueError("circle radius must be a nonnegative number")

    def contains(self, p: GeoPoint) -> bool:
        return haversine_distance(self.center, p) <= self.radius_m


def _ecef(lat_deg: np.ndarray, lon_deg: np.ndarray) -> np.ndarray:
    """Earth-centered coordinates on the sphere, shape (n, 3)."""
    phi = np.radians(lat_deg)
    lam = np.radians(lon_deg)
    return np.column_stack(
        (
            EARTH_RADIUS_M * np.cos(phi) * np.cos(lam),
            EARTH_RADIUS_M * np.cos(phi) * np.sin(lam),
            EARTH_RADIUS_M * np.sin(phi),
        )
    )


def _chord_radius(great_circle_m: float) -> float:
    d = min(max(great_circle_m, 0.0), math.pi * EARTH_RADIUS_M)
    return 2.0 * EARTH_RADIUS_M * math.sin(d / (2.0 * EARTH_RADIUS_M))


def _vectorized_haversine(center: GeoPoint, lat_deg: np.ndarray, lon_deg: np.ndarray) -> np.ndarray:
    phi1 = center.lat_deg * _DEG
    phi2 = lat_deg * _DEG
    dphi = (lat_deg - center.lat_deg) * _DEG
    dlam = (lon_deg - center.lon_deg) * _DEG
    h = np.sin(dphi / 2.0) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


class PointIndex:
    """Immutable spatial index answering great-circle radius queries.

    A 3D KD-tree over earth-centered coordinates does the bulk counting
    by chord distance, which is monotone in great-circle distance. Whether
    a point lies inside is decided in C for everything clearly away from
    the query boundary; candidates within a millimeter of it are re-checked
    with the scalar haversine predicate, so results equal a linear scan
    even for points constructed exactly at the radius.
    """

    # Great-circle band around the query radius inside which candidates are
    # re-checked exactly; covers chord/haversine float disagreement with
    # orders of magnitude to spare.
    _BAND_M = 1e-3

    def __init__(self, entries: list[tuple[str, GeoPoint]]):
        ids = [e[0] for e in entries]
        if len(set(ids)) != len(ids):
            seen, dup = set(), None
            for i in ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise DuplicateIdError(f"duplicate point id {dup!r}")
        self._ids = ids
        self._points = [e[1] for e in entries]
        if entries:
            self._lat = np.array([p.lat_deg for p in self._points])
            self._lon = np.array([p.lon_deg for p in self._points])
            self._tree = cKDTree(_ecef(self._lat, self._lon))
        else:
            self._lat = np.empty(0)
            self._lon = np.empty(0)
            self._tree = None

    def __len__(self) -> int:
        return len(self._ids)

    @staticmethod
    def _query_vector(center: GeoPoint) -> list[float]:
        phi = center.lat_deg * _DEG
        lam = center.lon_deg * _DEG
        return [
            EARTH_RADIUS_M * math.cos(phi) * math.cos(lam),
            EARTH_RADIUS_M * math.cos(phi) * math.sin(lam),
            EARTH_RADIUS_M * math.sin(phi),
        ]

    def _border_candidates(self, center: GeoPoint, radius_m: float) -> list[int]:
        """Indices within the outer chord bound, for exact re-checking."""
        chord_hi = _chord_radius(radius_m + self._BAND_M)
        return self._tree.query_ball_point(self._query_vector(center), chord_hi)

    def _exact_count(self, center: GeoPoint, radius_m: float) -> int:
        cand = np.array(self._border_candidates(center, radius_m), dtype=np.intp)
        if cand.size == 0:
            return 0
        d = _vectorized_haversine(center, self._lat[cand], self._lon[cand])
        definite = int(np.count_nonzero(d <= radius_m - self._BAND_M))
        border = cand[(d > radius_m - self._BAND_M) & (d <= radius_m + self._BAND_M)]
        exact = sum(
            1 for i in border if haversine_distance(center, self._points[i]) <= radius_m
        )
        return definite + exact

    def count_within_radius(self, center: GeoPoint, radius_m: float) -> int:
        """Number of indexed points at great-circle distance <= radius_m."""
        if radius_m < 0:
            raise ValueError("radius must be nonnegative")
        if self._tree is None:
            return 0
        q = self._query_vector(center)
        n_lo = self._tree.query_ball_point(
            q, _chord_radius(radius_m - self._BAND_M), return_length=True
        )
        n_hi = self._tree.query_ball_point(
            q, _chord_radius(radius_m + self._BAND_M), return_length=True
        )
        if n_lo == n_hi:
            return int(n_lo)
        return self._exact_count(center, radius_m)

    def collect_within_radius(self, center: GeoPoint, radius_m: float) -> list[tuple[str, GeoPoint]]:
        """The (id, point) entries at great-circle distance <= radius_m."""
        if radius_m < 0:
            raise ValueError("radius must be nonnegative")
        if self._tree is None:
            return []
        cand = np.array(self._border_candidates(center, radius_m), dtype=np.intp)
        if cand.size == 0:
            return []
        d = _vectorized_haversine(center, self._lat[cand], self._lon[cand])
        hits = list(cand[d <= radius_m - self._BAND_M])
        for i in cand[(d > radius_m - self._BAND_M) & (d <= radius_m + self._BAND_M)]:
            if haversine_distance(center, self._points[i]) <= radius_m:
                hits.append(i)
        return [(self._ids[i], self._points[i]) for i in sorted(hits)]

    def count_within_radius_many(self, centers: list[GeoPoint], radii) -> np.ndarray:
        """Vectorized counts for per-center radii; equals per-call counts."""
        radii = np.asarray(radii, dtype=float)
        if len(centers) != radii.shape[0]:
            raise ValueError("centers and radii must align")
        if np.any(radii < 0):
            raise ValueError("radius must be nonnegative")
        counts = np.zeros(len(centers), dtype=np.int64)
        if self._tree is None or not centers:
            return counts
        lat = np.array([c.lat_deg for c in centers])
        lon = np.array([c.lon_deg for c in centers])
        q = _ecef(lat, lon)
        chords_lo = np.array([_chord_radius(r - self._BAND_M) for r in radii])
        chords_hi = np.array([_chord_radius(r + self._BAND_M) for r in radii])
        n_lo = self._tree.query_ball_point(q, chords_lo, return_length=True)
        n_hi = self._tree.query_ball_point(q, chords_hi, return_length=True)
        counts[:] = n_lo
        for j in np.nonzero(n_lo != n_hi)[0]:
            counts[j] = self._exact_count(centers[j], float(radii[j]))
        return counts


def build_point_index(points: list[tuple[str, GeoPoint]]) -> PointIndex:
    """Index (id, point) pairs for radius counting. Raises DuplicateIdError."""
    return PointIndex(points)


def count_within_radius(index: PointIndex, center: GeoPoint, radius_m: float) -> int:
    return index.count_within_radius(center, radius_m)
