"""Environment-lighting toolkit: HDR environment-map decomposition and
recomposition, panorama photometry and ambient classification, pinhole-view
masking and stitching, real-time color refinement with multi-output
selection, lighting-condition augmentation, and the two quantitative
evaluation protocols, with the generative step behind a pluggable backend."""

from .envmap import (
    EnvironmentMap,
    HighIntensityMap,
    SolidAngleWeights,
    decompose,
    recompose,
    recompose_grayscale,
    resize,
    sigmoid_map,
    sigmoid_unmap,
    solid_angle_weights,
)
from .hdr_io import load_hdr, save_hdr
from .png_io import load_ldr, save_ldr
from .photometry import (
    AmbientLabels,
    AmbientLightReading,
    cct,
    classify_ambient,
    mean_pixel_intensity,
    preprocess,
    total_luminance,
)
from .context import (
    ObservationMask,
    ViewSpec,
    apply_mask,
    build_prompt_p1,
    build_prompt_p2,
    compose_masks,
    project_view_mask,
    sample_random_views,
    stitch_observation,
)
from .refinement import (
    ColorRefinementMatrix,
    Palette,
    apply_refinement,
    build_refinement_matrix,
    extract_palette,
    global_multiplier,
    local_multipliers,
    palette_similarity,
    refine,
    select_best,
)
from .augmentation import (
    AugmentationSpec,
    DatasetManifest,
    bin_and_sample,
    generate_variants,
    make_training_pair,
    scale_intensity,
    shift_temperature,
)
from .evaluation import (
    MetricReport,
    SphereImage,
    SphereMaterial,
    angular_error,
    ldr_rmse,
    render_sphere,
    rmse,
    run_robustness,
    run_three_sphere,
    si_rmse,
)
from .backend import BackendDescriptor, OracleBackend, RemoteBackend, make_mock_server
from .pipeline import EstimationRequest, EstimationResult, estimate, refresh

__version__ = "0.1.0"
