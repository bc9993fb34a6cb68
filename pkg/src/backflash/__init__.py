"""Backflash side-channel analysis for polarization-encoding fiber QKD."""

from .attack import (
    CalibrationResult,
    CountRecord,
    ERResult,
    calibrate,
    decode_fraction,
    default_bob_angles,
    estimate_er,
    monte_carlo_counts,
    simulate_er,
)
from .components import (
    PaddleControllerConfig,
    PaddleSpec,
    PBSCurves,
    SpectralCurve,
    controller_transform,
    default_backflash_spectrum,
    default_detector_curve,
    default_pbs_curves,
    detector_efficiency,
    pbs_split,
    read_curve,
    retardance,
    write_curve,
)
from .jones import A, D, H, V, PolarizationState, PolarizationTransform, apply, compose, project_hv, rotated_retarder
from .keyrate import (
    ChannelParams,
    GainStats,
    Intensities,
    LeakParams,
    binary_entropy,
    channel_model,
    e1_upper,
    keyrate_attack,
    keyrate_no_attack,
    max_distance,
    optimize_intensities,
    p_backflash,
    p_leak,
    y1_lower,
)

__version__ = "0.1.0"
