"""geopriv: density-aware geomasking with spatial k-anonymity evaluation."""

from .geo import (
    EARTH_RADIUS_M,
    Circle,
    GeoPoint,
    LocalFrame,
    LocalXY,
    MultiPolygon,
    PointIndex,
    Polygon,
    build_point_index,
    haversine_distance,
)
from .ingest import (
    BlockGroup,
    PopulationDataset,
    TraceRecord,
    Zone,
    ZoneSet,
    parse_population,
    parse_traces,
    parse_zones,
    sample_residential_points,
)
from .mask import (
    GeoIndConfig,
    MaskConfig,
    MaskedRecord,
    Multipliers,
    age_density_multiplier,
    combined_multiplier,
    effective_sigma,
    gaussian_skew,
    mask_dataset,
    planar_laplace,
    redact,
    total_density_multiplier,
)
from .privacy import (
    EvalReport,
    KAnonResult,
    buffer_radius,
    calibrate_c,
    evaluate_dataset,
    k_anonymity,
)
from .heatmap import (
    GridSpec,
    HeatCell,
    HeatMap,
    aggregate_multi,
    aggregate_single,
    classify,
    coarsen,
    danger_overlay,
    retention_filter,
)
from .tracesim import (
    ExposureEvent,
    SimConfig,
    UtilityMetrics,
    detect_exposures,
    generate_traces,
    tradeoff_sweep,
    utility,
)

__version__ = "0.1.0"
