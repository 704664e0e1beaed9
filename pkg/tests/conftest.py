"""Shared fixtures: a synthetic 3x3-block-group city around (0, 0)."""

import json
from datetime import datetime, timezone

import numpy as np
import pytest

from geopriv.geo import GeoPoint
from geopriv.ingest import BlockGroup, PopulationDataset, TraceRecord, parse_population

# 3x3 grid of square block groups, each ~0.02 deg (~2.2 km) on a side.
CITY_DEG = 0.02
CITY_DENSITIES = [400, 800, 1200, 1600, 6400, 2400, 3200, 4000, 5000]
T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)


def city_geojson() -> dict:
    features = []
    k = 0
    for row in range(3):
        for col in range(3):
            lat0 = (row - 1.5) * CITY_DEG
            lon0 = (col - 1.5) * CITY_DEG
            ring = [
                [lon0, lat0],
                [lon0 + CITY_DEG, lat0],
                [lon0 + CITY_DEG, lat0 + CITY_DEG],
                [lon0, lat0 + CITY_DEG],
                [lon0, lat0],
            ]
            d = CITY_DENSITIES[k]
            features.append(
                {
                    "type": "Feature",
                    "properties": {
                        "id": f"bg{k}",
                        "total_density": d,
                        "age_density": {
                            "young": d * 0.25,
                            "adult": d * 0.5,
                            "senior": d * 0.25,
                        },
                    },
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                }
            )
            k += 1
    return {"type": "FeatureCollection", "features": features}


@pytest.fixture(scope="session")
def city_pop() -> PopulationDataset:
    import io

    return parse_population(io.StringIO(json.dumps(city_geojson())))


def sample_city_records(pop: PopulationDataset, n: int, seed: int) -> list[TraceRecord]:
    """n records at density-weighted random positions inside the city."""
    rng = np.random.default_rng(seed)
    weights = np.array(
        [bg.total_density * pop.areas_km2[bg.id] for bg in pop.block_groups], dtype=float
    )
    weights /= weights.sum()
    records = []
    for i in range(n):
        bg = pop.block_groups[rng.choice(len(pop.block_groups), p=weights)]
        min_lat, min_lon, max_lat, max_lon = bg.boundary.bounds()
        while True:
            p = GeoPoint(rng.uniform(min_lat, max_lat), rng.uniform(min_lon, max_lon))
            if bg.boundary.contains(p):
                break
        records.append(TraceRecord(f"u{i % 500:04d}", T0, p))
    return records
