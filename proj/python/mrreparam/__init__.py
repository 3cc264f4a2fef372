"""MR image re-parameterization: spin-echo simulator, Param-Net inference and metrics."""

from ._core import (
    DEFAULT_PARAMS,
    TE_RANGE,
    TR_RANGE,
    ConfigError,
    CorruptionError,
    Error,
    FormatError,
    InvalidArgument,
    IoError,
    ModeMismatch,
    NumericError,
    Predictor,
    build_dataset,
    evaluate,
    mae,
    normalize_params,
    phantom_slices,
    psnr,
    read_slice,
    resize_bilinear,
    sample_param_pairs,
    simulate_image,
    spin_echo_signal,
    to_display_units,
    write_slice,
)

__version__ = "0.1.0"
