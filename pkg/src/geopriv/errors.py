"""Exception types shared across the toolkit."""


class GeoprivError(Exception):
    """Base class for all geopriv errors."""


class OutOfFrameError(GeoprivError):
    """Point lies outside the 1-degree local projection frame."""


class DuplicateIdError(GeoprivError):
    """Two indexed points share an id."""


class MissingHeaderError(GeoprivError):
    """CSV input lacks the required header."""


class RowParseError(GeoprivError):
    """A single malformed CSV row. Collected into parse reports, not raised."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingPropertyError(GeoprivError):
    """GeoJSON feature lacks a required property."""


class InvalidPolygonError(GeoprivError):
    """Ring is degenerate or self-intersecting."""


class NonPositiveDensityError(GeoprivError):
    """Density value violates its positivity requirement."""


class UnknownLabelError(GeoprivError):
    """Zone label outside {private, public, danger}."""


class UnknownBracketError(GeoprivError):
    """Age bracket not present in the population dataset."""


class MissingRadiusError(GeoprivError):
    """Point zone feature without a radius_m property."""


class AgeWeightOutOfRangeError(GeoprivError):
    """Age-multiplier weight outside [0, 1]."""


class PointOutsideBlockGroupsError(GeoprivError):
    """Record location not covered by any block group."""


class RejectionBudgetExceededError(GeoprivError):
    """Minimum-displacement rejection sampling failed to terminate."""


class InvalidCoverageError(GeoprivError):
    """Coverage probability outside (0, 1)."""


class NoResidentialDataError(GeoprivError):
    """k-anonymity evaluation requested without residential points."""


class TargetUnreachableError(GeoprivError):
    """Calibration grid exhausted without meeting the anonymity target."""


class MultipleUsersError(GeoprivError):
    """Single-user aggregation fed records from more than one user."""


class EmptyMapError(GeoprivError):
    """Classification requested on a heat map with no visible cells."""
