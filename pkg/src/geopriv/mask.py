"""Masking mechanisms.

Three mechanisms share one driver:

* ``gaussian-skew`` — independent zero-mean Gaussian offsets whose
  standard deviation is the scaling factor c times a combined
  density multiplier, so displacement shrinks where population density
  is high and grows where it is low.
* ``planar-laplace`` — polar Laplace noise at privacy parameter epsilon,
  sampled by inverse CDF through the lower Lambert W branch.
* ``redact-only`` — consent redaction with no coordinate noise.

The density multipliers:

    age_ratio   = average age-group density / block-group age density
    total_ratio = average total density     / block-group total density
    combined    = w * age_ratio + (1 - w) * total_ratio,  w in [0, 1]

and the Gaussian sigma is ``c * combined``. Doubling a block group's
density therefore halves the displacement scale exactly (at w = 0).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import (
    AgeWeightOutOfRangeError,
    MissingHeaderError,
    NonPositiveDensityError,
    PointOutsideBlockGroupsError,
    RejectionBudgetExceededError,
    RowParseError,
    UnknownBracketError,
)
from .geo import GeoPoint, LocalFrame, LocalXY, haversine_distance
from .ingest import (
    BlockGroup,
    PopulationDataset,
    TraceRecord,
    ZoneSet,
    format_timestamp,
    parse_timestamp,
)
from .sampling import laplace_radial_quantile

MECHANISMS = ("gaussian-skew", "planar-laplace", "redact-only")

MASKED_CSV_HEADER = [
    "user_id",
    "timestamp",
    "lat",
    "lon",
    "mechanism",
    "sigma_eff",
    "displacement_m",
    "k",
    "risk",
]

_REJECTION_BUDGET = 1_000_000


@dataclass(frozen=True)
class Multipliers:
    """Density-multiplier breakdown recorded on each masked point."""

    age_ratio: float | None
    total_ratio: float
    combined: float
    age_weight: float


@dataclass(frozen=True)
class MaskConfig:
    """Gaussian-skew parameters.

    scale_m is the scaling factor converting the dimensionless combined
    multiplier into meters of displacement sigma. age_weight blends the
    age-based and total density ratios. min_displacement_m forces a
    minimum skew via rejection resampling.
    """

    scale_m: float
    age_weight: float = 0.0
    min_displacement_m: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.scale_m) and self.scale_m > 0):
            raise ValueError(f"scale_m must be > 0, got {self.scale_m}")
        if not 0.0 <= self.age_weight <= 1.0:
            raise AgeWeightOutOfRangeError(f"age_weight must be in [0, 1], got {self.age_weight}")
        if not (math.isfinite(self.min_displacement_m) and self.min_displacement_m >= 0):
            raise ValueError("min_displacement_m must be >= 0")


@dataclass(frozen=True)
class GeoIndConfig:
    """Planar-Laplace parameters: epsilon (1/m) and the nominal radius
    documenting the (epsilon, radius) privacy level."""

    epsilon: float
    nominal_radius_m: float = 100.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not (math.isfinite(self.nominal_radius_m) and self.nominal_radius_m > 0):
            raise ValueError("nominal_radius_m must be > 0")


@dataclass(frozen=True)
class MaskedRecord:
    """A masked observation plus the provenance needed to evaluate it.

    ``original`` is None when the record was read back from a masked CSV
    (the anonymized file deliberately omits source coordinates);
    ``displacement_m`` survives the round trip either way.
    """

    user_id: str
    timestamp: datetime
    masked_point: GeoPoint
    mechanism: str
    displacement_m: float
    displacement: LocalXY | None = None
    sigma_eff: float | None = None
    epsilon: float | None = None
    multipliers: Multipliers | None = None
    original: TraceRecord | None = None


@dataclass(frozen=True)
class RedactionReport:
    removed_by_zone: dict[str, int]
    removed_by_user: dict[str, int]

    @property
    def total_removed(self) -> int:
        return sum(self.removed_by_zone.values()) + sum(self.removed_by_user.values())


def age_density_multiplier(avg_age_density: float, bg_age_density: float) -> float:
    """Ratio of dataset-average to block-group age-bracket density."""
    if avg_age_density <= 0 or bg_age_density <= 0:
        raise NonPositiveDensityError(
            f"age densities must be > 0, got average={avg_age_density}, block={bg_age_density}"
        )
    return avg_age_density / bg_age_density


def total_density_multiplier(avg_total_density: float, bg_total_density: float) -> float:
    """Ratio of dataset-average to block-group total density."""
    if avg_total_density <= 0 or bg_total_density <= 0:
        raise NonPositiveDensityError(
            f"total densities must be > 0, got average={avg_total_density}, block={bg_total_density}"
        )
    return avg_total_density / bg_total_density


def combined_multiplier(age_weight: float, age_ratio: float, total_ratio: float) -> float:
    """Convex blend of the age and total density ratios."""
    if not 0.0 <= age_weight <= 1.0:
        raise AgeWeightOutOfRangeError(f"age_weight must be in [0, 1], got {age_weight}")
    return age_weight * age_ratio + (1.0 - age_weight) * total_ratio


def multipliers_for(
    pop: PopulationDataset,
    bg: BlockGroup,
    bracket: str | None,
    age_weight: float,
) -> Multipliers:
    """Multiplier breakdown for a user in a block group.

    Without a bracket the age weight is treated as zero and the combined
    multiplier reduces to the total-density ratio.
    """
    total_ratio = total_density_multiplier(pop.average_total_density, bg.total_density)
    if bracket is None:
        return Multipliers(None, total_ratio, combined_multiplier(0.0, 0.0, total_ratio), 0.0)
    if bracket not in pop.average_age_density:
        raise UnknownBracketError(f"age bracket {bracket!r} not present in population data")
    age_ratio = age_density_multiplier(
        pop.average_age_density[bracket], bg.age_densities.get(bracket, 0.0)
    )
    return Multipliers(
        age_ratio,
        total_ratio,
        combined_multiplier(age_weight, age_ratio, total_ratio),
        age_weight,
    )


def effective_sigma(
    cfg: MaskConfig,
    bg: BlockGroup,
    pop: PopulationDataset,
    bracket: str | None = None,
) -> float:
    """Displacement sigma in meters: scale_m times the combined multiplier."""
    return cfg.scale_m * multipliers_for(pop, bg, bracket, cfg.age_weight).combined


def gaussian_skew(
    p: GeoPoint,
    sigma_eff: float,
    min_displacement_m: float,
    rng: np.random.Generator,
) -> tuple[GeoPoint, LocalXY]:
    """Skew one point with N(0, sigma_eff^2) offsets in its local frame.

    Draws below min_displacement_m are rejected and redrawn, preserving
    the Gaussian shape outside the forbidden disk.
    """
    if sigma_eff <= 0:
        raise ValueError(f"sigma_eff must be > 0, got {sigma_eff}")
    frame = LocalFrame(p)
    for _ in range(_REJECTION_BUDGET):
        dx, dy = rng.normal(0.0, sigma_eff, size=2)
        if math.hypot(dx, dy) >= min_displacement_m:
            offset = LocalXY(dx, dy)
            return frame.unproject(offset), offset
    raise RejectionBudgetExceededError(
        f"no draw reached min displacement {min_displacement_m} m after "
        f"{_REJECTION_BUDGET} attempts (sigma_eff={sigma_eff} m)"
    )


def planar_laplace(
    p: GeoPoint, cfg: GeoIndConfig, rng: np.random.Generator
) -> tuple[GeoPoint, LocalXY]:
    """Geo-indistinguishable noise: uniform angle, Lambert-W radial quantile."""
    theta = rng.uniform(0.0, 2.0 * math.pi)
    u = rng.random()
    r = laplace_radial_quantile(u, cfg.epsilon)
    offset = LocalXY(r * math.cos(theta), r * math.sin(theta))
    frame = LocalFrame(p)
    return frame.unproject(offset), offset


def redact(
    records: list[TraceRecord],
    zones: ZoneSet | None,
    mode: str = "per-zone",
    revoked_users: frozenset[str] | set[str] = frozenset(),
) -> tuple[list[TraceRecord], RedactionReport]:
    """Apply consent redaction.

    per-zone mode removes records located inside any private zone;
    full-revocation mode removes every record of the revoked users.
    Explicit revocations are honored in both modes (full revocation
    supersedes zone consent). Each removed record is attributed to the
    first matching zone in file order.
    """
    if mode not in ("per-zone", "full-revocation"):
        raise ValueError(f"unknown redaction mode {mode!r}")
    private = zones.private_zones if zones is not None else ()
    removed_by_zone: dict[str, int] = {}
    removed_by_user: dict[str, int] = {}
    kept = []
    for rec in records:
        if rec.user_id in revoked_users:
            removed_by_user[rec.user_id] = removed_by_user.get(rec.user_id, 0) + 1
            continue
        if mode == "per-zone":
            hit = next((z for z in private if z.contains(rec.point)), None)
            if hit is not None:
                removed_by_zone[hit.zone_id] = removed_by_zone.get(hit.zone_id, 0) + 1
                continue
        kept.append(rec)
    return kept, RedactionReport(removed_by_zone, removed_by_user)


class RecordStreams:
    """Deterministic per-record RNG substreams from one seed.

    One Philox generator keyed by the seed; each record index selects a
    disjoint 2^64-block counter range, so results do not depend on how
    records are batched or ordered. Intended for sequential use; parallel
    workers should each build their own instance.
    """

    def __init__(self, seed: int):
        self._bitgen = np.random.Philox(key=seed)
        self._gen = np.random.Generator(self._bitgen)

    def stream(self, index: int) -> np.random.Generator:
        state = self._bitgen.state
        state["state"]["counter"][:] = 0
        state["state"]["counter"][1] = index
        state["buffer_pos"] = 4  # discard any buffered draws from earlier records
        state["has_uint32"] = 0
        self._bitgen.state = state
        return self._gen


def mask_dataset(
    records: list[TraceRecord],
    pop: PopulationDataset | None,
    cfg: MaskConfig | GeoIndConfig | None,
    mechanism: str,
    zones: ZoneSet | None = None,
    seed: int = 0,
    user_brackets: dict[str, str] | None = None,
    revoked_users: frozenset[str] | set[str] = frozenset(),
) -> tuple[list[MaskedRecord], RedactionReport]:
    """Mask a trace dataset, redacting first when zones are given.

    Masking draws come from per-record substreams keyed by (seed, index
    within the post-redaction list), so identical inputs and seed produce
    identical output regardless of batching.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    if mechanism == "gaussian-skew":
        if pop is None:
            raise ValueError("gaussian-skew requires population data")
        if not isinstance(cfg, MaskConfig):
            raise ValueError("gaussian-skew requires a MaskConfig")
    if mechanism == "planar-laplace" and not isinstance(cfg, GeoIndConfig):
        raise ValueError("planar-laplace requires a GeoIndConfig")

    kept, report = redact(records, zones, mode="per-zone", revoked_users=revoked_users)
    streams = RecordStreams(seed)
    brackets = user_brackets or {}
    sigma_cache: dict[tuple[str, str | None], tuple[float, Multipliers]] = {}
    bg_cache: dict[tuple[float, float], BlockGroup | None] = {}
    out: list[MaskedRecord] = []

    for index, rec in enumerate(kept):
        if mechanism == "redact-only":
            out.append(
                MaskedRecord(
                    user_id=rec.user_id,
                    timestamp=rec.timestamp,
                    masked_point=rec.point,
                    mechanism=mechanism,
                    displacement_m=0.0,
                    displacement=LocalXY(0.0, 0.0),
                    original=rec,
                )
            )
            continue
        rng = streams.stream(index)
        if mechanism == "gaussian-skew":
            coords = (rec.point.lat_deg, rec.point.lon_deg)
            if coords in bg_cache:
                bg = bg_cache[coords]
            else:
                bg = pop.find_block_group(rec.point)
                bg_cache[coords] = bg
            if bg is None:
                raise PointOutsideBlockGroupsError(
                    f"record {index} for {rec.user_id!r} at "
                    f"({rec.point.lat_deg}, {rec.point.lon_deg}) is outside all block groups"
                )
            bracket = brackets.get(rec.user_id)
            key = (bg.id, bracket)
            if key not in sigma_cache:
                mult = multipliers_for(pop, bg, bracket, cfg.age_weight)
                sigma_cache[key] = (cfg.scale_m * mult.combined, mult)
            sigma, mult = sigma_cache[key]
            masked, offset = gaussian_skew(rec.point, sigma, cfg.min_displacement_m, rng)
            out.append(
                MaskedRecord(
                    user_id=rec.user_id,
                    timestamp=rec.timestamp,
                    masked_point=masked,
                    mechanism=mechanism,
                    displacement_m=offset.norm(),
                    displacement=offset,
                    sigma_eff=sigma,
                    multipliers=mult,
                    original=rec,
                )
            )
        else:
            masked, offset = planar_laplace(rec.point, cfg, rng)
            out.append(
                MaskedRecord(
                    user_id=rec.user_id,
                    timestamp=rec.timestamp,
                    masked_point=masked,
                    mechanism=mechanism,
                    displacement_m=offset.norm(),
                    displacement=offset,
                    epsilon=cfg.epsilon,
                    original=rec,
                )
            )
    return out, report


def masked_to_traces(records: list[MaskedRecord]) -> list[TraceRecord]:
    """View masked records as plain traces (for detection or aggregation)."""
    return [TraceRecord(m.user_id, m.timestamp, m.masked_point) for m in records]


def write_masked_csv(records: list[MaskedRecord], fh, k_risk: list | None = None) -> None:
    """Write the masked CSV; k/risk columns stay empty unless results are given.

    sigma_eff is only populated for gaussian-skew records; planar-Laplace
    privacy is parameterized by epsilon, which this schema does not carry.
    """
    if k_risk is not None and len(k_risk) != len(records):
        raise ValueError("k_risk must align with records")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(MASKED_CSV_HEADER)
    for i, m in enumerate(records):
        k = ""
        risk = ""
        if k_risk is not None and k_risk[i] is not None:
            k = k_risk[i].k
            risk = repr(float(k_risk[i].risk))
        writer.writerow(
            [
                m.user_id,
                format_timestamp(m.timestamp),
                repr(m.masked_point.lat_deg),
                repr(m.masked_point.lon_deg),
                m.mechanism,
                "" if m.sigma_eff is None else repr(m.sigma_eff),
                repr(m.displacement_m),
                k,
                risk,
            ]
        )


def read_masked_csv(source) -> tuple[list[MaskedRecord], list[RowParseError]]:
    """Read a masked CSV back into records (originals are not recoverable)."""
    if hasattr(source, "read"):
        fh, should_close = source, False
    else:
        fh, should_close = open(source, "r", encoding="utf-8", newline=""), True
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingHeaderError("masked file is empty (no header)")
        if [h.strip() for h in header[: len(MASKED_CSV_HEADER)]] != MASKED_CSV_HEADER:
            raise MissingHeaderError(
                f"expected masked-CSV header {','.join(MASKED_CSV_HEADER)!r}"
            )
        records: list[MaskedRecord] = []
        errors: list[RowParseError] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < 7:
                    raise ValueError(f"expected at least 7 fields, got {len(row)}")
                mechanism = row[4].strip()
                if mechanism not in MECHANISMS:
                    raise ValueError(f"unknown mechanism {mechanism!r}")
                records.append(
                    MaskedRecord(
                        user_id=row[0].strip(),
                        timestamp=parse_timestamp(row[1]),
                        masked_point=GeoPoint(float(row[2]), float(row[3])),
                        mechanism=mechanism,
                        sigma_eff=float(row[5]) if row[5].strip() else None,
                        displacement_m=float(row[6]),
                    )
                )
            except (ValueError, OverflowError) as exc:
                errors.append(RowParseError(line_no, str(exc)))
        return records, errors
    finally:
        if should_close:
            fh.close()
