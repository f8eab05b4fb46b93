"""Dip-probe granular media recognition toolkit.

Synthetic four-cell force/torque sensing, preprocessing (gravity
compensation, Butterworth LPF, velocity resampling), a from-scratch
multi-channel encoder classifier with a DTW+KNN baseline, evaluation
protocols, and an interactive subsurface-mapping service.
"""

from .sensor import (
    CalibrationParams,
    DEFAULT_CALIBRATION,
    LoadCellReading,
    WrenchSample,
    calibrate,
    check_range,
    compose_wrench,
)
from .simulate import (
    MEDIA_CLASSES,
    MediaModel,
    OperatorProfile,
    RawRecording,
    default_media_library,
    generate_dataset,
    operator_pool,
    simulate_dip,
    simulate_layered_dip,
)
from .preprocess import (
    FilterSpec,
    NormStats,
    ProcessedWindow,
    WrenchSeries,
    build_window_dataset,
    butterworth_lpf,
    gravity_compensate,
    normalize,
    preprocess_recording,
    sliding_windows,
    velocity_resample,
)
from .mce import (
    MceConfig,
    MceParams,
    Prediction,
    Recognizer,
    TrainConfig,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .dtw import dtw_distance, dtw_knn_predict, dtw_knn_predict_batch
from .evaluate import (
    ConfusionMatrix,
    MetricReport,
    SplitPlan,
    confusion,
    kfold,
    leave_one_operator_out,
    length_sweep,
    metrics,
)
from .mapping import (
    ColorMap,
    DipEvent,
    GridSpec,
    SubsurfaceMap,
    composite,
    default_colormap,
    export_map,
    record_dip,
)
from .service import MappingService, Scene, create_app, default_scene

__version__ = "0.1.0"
