"""Exception types shared across the package."""

from __future__ import annotations


class AdaptPcaError(Exception):
    """Base class for all errors raised by :mod:`adaptpca`."""


class DataError(AdaptPcaError, ValueError):
    """Input data is malformed: wrong shape, non-finite values, bad ordering."""


class FormatError(AdaptPcaError, ValueError):
    """A persisted payload (model, scaler, snapshot, CSV) could not be parsed."""


class ConfigError(AdaptPcaError, ValueError):
    """Invalid configuration values or inconsistent component settings."""
