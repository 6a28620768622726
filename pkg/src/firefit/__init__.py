"""Fire arrival time reconstruction on rectangular grids.

The package recovers an arrival time field T(x, y) whose gradient
magnitude approximately matches the reciprocal of a given spread rate
field, while interpolating observed fire perimeters exactly.  The
pieces: grid and field containers with raster I/O, spread rate models,
linear interpolation constraints with a nullspace projector, a spectral
fractional-smoothing initializer, an upwind residual objective with a
pit penalty, a multiscale projected coordinate descent optimizer, a
fast marching eikonal solver, and a satellite detection likelihood for
ignition estimation.
"""

from .errors import (
    AnchorError,
    ConfigError,
    ConstraintDriftError,
    FirefitError,
    GeometryError,
    InvalidDimensionError,
    OutOfCoverageError,
    OutOfDomainError,
    PCGBreakdownError,
    RankDeficiencyError,
    ShapeMismatchError,
)
from .grid import (
    Grid,
    ScalarField,
    bilinear_sample,
    count_local_minima,
    make_grid,
    read_esri_ascii,
    read_field_csv,
    upwind_gradient_norm,
    upwind_gradient_norm_squared,
    write_esri_ascii,
    write_field_csv,
)
from .spread import (
    FieldRos,
    RosModel,
    RothermelInputs,
    SectoredRos,
    SectorSpec,
    UniformRos,
    evaluate_ros,
    node_rate_field,
    rothermel_rate,
    sectored_ros_field,
)
from .constraint import (
    ConstraintSystem,
    Perimeter,
    build_constraints,
    feasible_point,
    locate_point,
    project_nullspace,
    read_perimeters_csv,
    triangle_sample,
    write_perimeters_csv,
)
from .smoother import (
    SmootherConfig,
    SpectralOperator,
    build_spectral_operator,
    funnel_metric,
    pcg,
    solve_initial,
)
from .objective import (
    ObjectiveConfig,
    default_penalty_weight,
    fast_march,
    objective,
    pit_depths,
    residual_field,
)
from .optimizer import (
    FitReport,
    LevelSchedule,
    coarse_basis,
    golden_section,
    line_search,
    multiscale_fit,
    sweep,
)
from .detection import (
    DetectionConfig,
    DetectionRecord,
    IgnitionScore,
    combined_objective,
    data_log_likelihood,
    detect_prob,
    heat_proxy,
    ignition_search,
    pixel_fire_prob,
    read_detections_csv,
    sample_detections,
    write_detections_csv,
)

__version__ = "0.1.0"
