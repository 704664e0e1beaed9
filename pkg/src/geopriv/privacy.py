"""Anonymity quantification for masked points.

The buffer around a masked point is the disk an attacker who knows the
mechanism would search: the coverage-p quantile of the radial
displacement distribution (Rayleigh for the Gaussian mechanism, the
Lambert-W quantile for planar Laplace). k counts candidate residential
locations inside that buffer, plus the original location itself when it
falls inside and is not already one of the indexed homes. Disclosure
risk is the exact rational 1/k.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from fractions import Fraction

from .errors import (
    InvalidCoverageError,
    NoResidentialDataError,
    TargetUnreachableError,
)
from .geo import GeoPoint, PointIndex, build_point_index, haversine_distance
from .ingest import PopulationDataset, TraceRecord, format_timestamp
from .mask import MaskConfig, MaskedRecord, mask_dataset
from .sampling import laplace_radial_quantile

DEFAULT_COVERAGE = 0.95

# Calibration grid: geometric in steps of 1.25 from 1 m up to 100 km.
CALIBRATION_GRID_START_M = 1.0
CALIBRATION_GRID_FACTOR = 1.25
CALIBRATION_GRID_MAX_M = 1e5
CALIBRATION_SUCCESS_FRACTION = 0.95


@dataclass(frozen=True)
class KAnonResult:
    """Anonymity of one masked point: k, exact risk 1/k, and the buffer used."""

    k: int
    risk: Fraction
    buffer_radius_m: float
    includes_original: bool

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.risk * self.k != 1:
            raise ValueError("risk must be exactly 1/k")


def buffer_radius(sigma_eff: float, coverage: float) -> float:
    """Rayleigh quantile: the radius holding the true location with
    probability ``coverage`` under the Gaussian mechanism."""
    if not 0.0 < coverage < 1.0:
        raise InvalidCoverageError(f"coverage must be in (0, 1), got {coverage}")
    if sigma_eff < 0:
        raise ValueError("sigma_eff must be >= 0")
    return sigma_eff * math.sqrt(-2.0 * math.log(1.0 - coverage))


def laplace_buffer_radius(epsilon: float, coverage: float) -> float:
    """Radial quantile of planar-Laplace noise at the same coverage."""
    if not 0.0 < coverage < 1.0:
        raise InvalidCoverageError(f"coverage must be in (0, 1), got {coverage}")
    return laplace_radial_quantile(coverage, epsilon)


def _original_in_buffer(masked: MaskedRecord, homes: PointIndex, radius_m: float) -> bool:
    """True when the original location adds a distinct candidate: inside
    the buffer and not coincident with an indexed home. Records read back
    from CSV carry no original coordinates; their stored displacement
    decides buffer membership and the original is assumed unindexed."""
    if masked.original is not None:
        orig = masked.original.point
        if haversine_distance(masked.masked_point, orig) > radius_m:
            return False
        return not any(p == orig for _, p in homes.collect_within_radius(orig, 0.0))
    return masked.displacement_m <= radius_m


def _assemble_result(
    masked: MaskedRecord, homes: PointIndex, home_count: int, radius_m: float
) -> KAnonResult:
    includes_original = _original_in_buffer(masked, homes, radius_m)
    k = max(home_count + (1 if includes_original else 0), 1)
    return KAnonResult(k, Fraction(1, k), radius_m, includes_original)


def k_anonymity(masked: MaskedRecord, homes: PointIndex, radius_m: float) -> KAnonResult:
    """Count candidate locations inside the buffer around a masked point.

    The original location contributes one extra candidate when it lies
    inside the buffer and does not coincide with an indexed home; k is
    floored at 1 so risk is always defined.
    """
    if radius_m < 0:
        raise ValueError("radius must be >= 0")
    count = homes.count_within_radius(masked.masked_point, radius_m)
    return _assemble_result(masked, homes, count, radius_m)


def record_buffer_radius(record: MaskedRecord, coverage: float) -> float:
    if record.mechanism == "planar-laplace":
        if record.epsilon is None:
            raise ValueError(
                "planar-laplace record without epsilon; pass the mechanism parameter"
            )
        return laplace_buffer_radius(record.epsilon, coverage)
    return buffer_radius(record.sigma_eff or 0.0, coverage)


@dataclass(frozen=True)
class EvalReport:
    """Per-point anonymity results plus a recomputable summary."""

    results: tuple[KAnonResult, ...]
    records: tuple[MaskedRecord, ...]
    coverage: float
    k_target: int
    seed: int | None = None

    @property
    def ks(self) -> list[int]:
        return [r.k for r in self.results]

    @property
    def min_k(self) -> int:
        return min(self.ks)

    @property
    def median_k(self) -> float:
        return float(statistics.median(self.ks))

    @property
    def mean_k(self) -> float:
        return sum(self.ks) / len(self.ks)

    @property
    def frac_k_ge_target(self) -> float:
        return sum(1 for k in self.ks if k >= self.k_target) / len(self.ks)

    @property
    def mean_displacement_m(self) -> float:
        return sum(m.displacement_m for m in self.records) / len(self.records)

    @property
    def mechanism(self) -> str:
        labels = {m.mechanism for m in self.records}
        return labels.pop() if len(labels) == 1 else "mixed"

    @property
    def worst_case_user_k(self) -> dict[str, int]:
        worst: dict[str, int] = {}
        for m, r in zip(self.records, self.results):
            worst[m.user_id] = min(worst.get(m.user_id, r.k), r.k)
        return worst

    def summary(self) -> dict:
        out = {
            "n": len(self.results),
            "mechanism": self.mechanism,
            "coverage": self.coverage,
            "k_target": self.k_target,
            "min_k": self.min_k,
            "median_k": self.median_k,
            "mean_k": self.mean_k,
            "frac_k_ge_target": self.frac_k_ge_target,
            "mean_displacement_m": self.mean_displacement_m,
            "worst_case_user_k": self.worst_case_user_k,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def to_json(self, indent: int = 2) -> str:
        doc = {
            "summary": self.summary(),
            "per_point": [
                {
                    "user_id": m.user_id,
                    "timestamp": format_timestamp(m.timestamp),
                    "k": r.k,
                    "risk": float(r.risk),
                    "buffer_radius_m": r.buffer_radius_m,
                    "includes_original": r.includes_original,
                }
                for m, r in zip(self.records, self.results)
            ],
        }
        return json.dumps(doc, indent=indent, sort_keys=True)


def evaluate_dataset(
    masked: list[MaskedRecord],
    homes: list[tuple[str, GeoPoint]] | PointIndex,
    coverage: float = DEFAULT_COVERAGE,
    k_target: int = 10,
    seed: int | None = None,
) -> EvalReport:
    """Evaluate k-anonymity for every masked record.

    Each record gets a buffer from its own mechanism parameters; the
    summary aggregates k, risk, and displacement statistics.
    """
    if not masked:
        raise NoResidentialDataError("no masked records to evaluate")
    if isinstance(homes, PointIndex):
        index = homes
    else:
        if not homes:
            raise NoResidentialDataError("no residential points available")
        index = build_point_index(homes)
    if len(index) == 0:
        raise NoResidentialDataError("no residential points available")
    if k_target < 1:
        raise ValueError("k_target must be >= 1")
    radii = [record_buffer_radius(m, coverage) for m in masked]
    counts = index.count_within_radius_many([m.masked_point for m in masked], radii)
    results = tuple(
        _assemble_result(m, index, int(count), radius)
        for m, count, radius in zip(masked, counts, radii)
    )
    return EvalReport(results, tuple(masked), coverage, k_target, seed)


def calibrate_c(
    pop: PopulationDataset,
    homes: list[tuple[str, GeoPoint]] | PointIndex,
    sample: list[TraceRecord],
    k_target: int,
    coverage: float = DEFAULT_COVERAGE,
    seed: int = 0,
    age_weight: float = 0.0,
    user_brackets: dict[str, str] | None = None,
) -> float:
    """Smallest grid scaling factor meeting the anonymity target.

    Walks the geometric grid upward, masking the sample at each candidate
    and keeping the first c where at least 95% of points reach k_target.
    """
    if not sample:
        raise ValueError("calibration sample must be nonempty")
    if not 0.0 < coverage < 1.0:
        raise InvalidCoverageError(f"coverage must be in (0, 1), got {coverage}")
    index = homes if isinstance(homes, PointIndex) else build_point_index(homes)
    if len(index) == 0:
        raise NoResidentialDataError("no residential points available")
    c = CALIBRATION_GRID_START_M
    while c <= CALIBRATION_GRID_MAX_M:
        cfg = MaskConfig(scale_m=c, age_weight=age_weight)
        masked, _ = mask_dataset(
            sample, pop, cfg, "gaussian-skew", seed=seed, user_brackets=user_brackets
        )
        report = evaluate_dataset(masked, index, coverage, k_target)
        if report.frac_k_ge_target >= CALIBRATION_SUCCESS_FRACTION:
            return c
        c *= CALIBRATION_GRID_FACTOR
    raise TargetUnreachableError(
        f"no grid c <= {CALIBRATION_GRID_MAX_M:.0f} m reaches k >= {k_target} "
        f"for {CALIBRATION_SUCCESS_FRACTION:.0%} of the sample"
    )
