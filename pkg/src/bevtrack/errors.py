"""Exception hierarchy shared across the package."""


class BevTrackError(Exception):
    """Base class for all package-specific errors."""


class CalibrationError(BevTrackError):
    """A calibration file is malformed or contains an invalid camera."""


class SingularHomography(BevTrackError):
    """The ground-plane homography is rank deficient (degenerate rig)."""


class InvalidCrop(BevTrackError):
    """A resize/crop window falls outside the scaled image."""


class OutOfGridError(BevTrackError):
    """A cell index lies outside the BEV grid."""


class ShapeMismatch(BevTrackError):
    """Array dimensions are inconsistent with the operation's contract."""


class GridMismatch(BevTrackError):
    """Voxel volumes defined on different grids cannot be combined."""


class EmptyMask(BevTrackError):
    """A masked loss was evaluated with no selected cells."""


class NoGroundTruth(BevTrackError):
    """Metrics are undefined because the ground truth is empty."""


class ConfigError(BevTrackError):
    """A scene or pipeline configuration is invalid."""


class FormatError(BevTrackError):
    """An input file does not conform to its documented format."""
