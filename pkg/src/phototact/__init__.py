"""Software stack for a color-shifting membrane tactile sensor.

Forward simulation of membrane/phantom contact, amplified difference
imaging, learned per-pixel depth calibration, sensor metrology, and linear
classification of stiff inclusions from depth statistics.
"""

__version__ = "0.1.0"

from .imaging import (
    MAX_DEPTH_MM,
    DeformationMap,
    DmapFormatError,
    HsvImage,
    PpmFormatError,
    RgbImage,
    SensorGeometry,
    hsv_to_rgb,
    hue_delta,
    load_dmap,
    load_ppm,
    rgb_to_hsv,
    save_dmap,
    save_ppm,
    validate_deformation_map,
)
from .imprint import ColorDeltaField, ImprintParams, augmented_imprint, color_delta
from .phantom import (
    ContactSolution,
    DatasetSpec,
    MembraneModel,
    PhantomConfig,
    PhantomSample,
    contact_solve,
    default_membrane,
    generate_phantom_dataset,
    render_reading,
    sphere_press_truth,
    stiffness_field,
)
from .calibration import (
    CalibrationModel,
    TrainConfig,
    TrainingDivergedError,
    build_calib_dataset,
    input_gradient,
    load_model,
    mlp_forward,
    reconstruct,
    save_model,
    train_mlp,
)
from .detection import (
    DetectorModel,
    EvalReport,
    FeatureVector,
    Standardizer,
    classify,
    decision_value,
    evaluate,
    extract_features,
    fit_detector,
    fit_standardizer,
    load_detector,
    save_detector,
    stratified_split,
    train_svm,
)
from .characterization import (
    CharacterizationReport,
    ForceSweep,
    IndenterRig,
    SensitivityResult,
    TrialSet,
    characterize,
    hysteresis,
    noise_floor,
    null_difference_stat,
    repeatability,
    repeatability_trials,
    run_force_sweep,
    sensitivity_profile,
    smooth_sweep,
)
