"""Personal sound zone simulation toolkit.

Room acoustics via the image source method, scene geometry for zone/grid
layouts, regularized pressure-matching pre-filter design, reproduction
metrics, and dataset serialization for downstream learning pipelines.
"""

__version__ = "0.1.0"

from .room import (
    ATFTensor,
    FrequencyGrid,
    Point3,
    RoomSpec,
    default_max_order,
    green_free_field,
    image_sources,
    rt60_to_reflection,
    simulate_atf,
)
from .scene import (
    MASK_NAMES,
    LoudspeakerArray,
    MaskPattern,
    PointGrid,
    Scene,
    SceneConfig,
    ZoneSpec,
    apply_mask,
    make_scene,
    mask_indices,
    sample_virtual_source,
)
from .solver import (
    PreFilterSet,
    TargetATF,
    pressure_match,
    reproduce_atf,
    solve_masked_pm,
    solve_masked_pm_many,
    tune_regularization,
)
from .metrics import (
    MetricsReport,
    acoustic_contrast,
    array_effort,
    broadband_acoustic_contrast,
    broadband_array_effort,
    broadband_relative_energy_error,
    compute_report,
    relative_energy_error,
)
from .dataio import (
    Dataset,
    generate_dataset,
    load_dataset,
    read_prefilters,
    read_tensor,
    write_prefilters,
    write_tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
