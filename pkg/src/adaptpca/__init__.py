"""Adaptive PCA-based outlier detection for multi-feature time series."""

from adaptpca.detector import Detector, DetectorConfig, DetectorState, Flag, Mode, Verdict
from adaptpca.errors import AdaptPcaError, ConfigError, DataError, FormatError
from adaptpca.pca_core import (
    PcaModel,
    batch_fit,
    load_model,
    partial_fit,
    reconstruct,
    reconstruction_error,
    reconstruction_error_vector,
    save_model,
)
from adaptpca.scaling import FeatureGroupMap, GroupScaler, fit_group_scaler, scale, unscale

__version__ = "0.1.0"

__all__ = [
    "AdaptPcaError",
    "ConfigError",
    "DataError",
    "Detector",
    "DetectorConfig",
    "DetectorState",
    "FeatureGroupMap",
    "Flag",
    "FormatError",
    "GroupScaler",
    "Mode",
    "PcaModel",
    "Verdict",
    "batch_fit",
    "fit_group_scaler",
    "load_model",
    "partial_fit",
    "reconstruct",
    "reconstruction_error",
    "reconstruction_error_vector",
    "save_model",
    "scale",
    "unscale",
]
