"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the split between
configuration, data, and numeric failures intact.
"""


class DemarkError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DemarkError):
    """Invalid or inconsistent configuration."""


class DataError(DemarkError):
    """Missing or malformed input data (files, manifests, assets)."""


class MissingFileError(DataError):
    """A referenced file does not exist."""


class ImageDecodeError(DataError):
    """File exists but its bytes cannot be decoded as an image."""


class UnsupportedImageError(DataError):
    """Decodable image, but not an 8-bit format this pipeline accepts."""


class PlacementError(DataError):
    """No valid watermark placement exists for the requested configuration."""


class NonInvertibleCompositeError(DataError):
    """Composite cannot be inverted because some pixel is fully opaque."""


class NumericError(DemarkError):
    """Numeric failure during optimization (non-finite loss etc.)."""
