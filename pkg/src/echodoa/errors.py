"""Exception types shared across the package.

Two families matter to callers: ``InputError`` covers malformed inputs,
files, and configuration (CLI exit code 3); ``ProcessingError`` covers
data-dependent failures discovered while computing (CLI exit code 1).
"""


class EchoDoaError(Exception):
    """Base class for all package errors."""


class InputError(EchoDoaError, ValueError):
    """Invalid configuration, arguments, or file contents."""


class ProcessingError(EchoDoaError, RuntimeError):
    """Operation failed on otherwise well-formed inputs."""


# --- simulation ---

class ScenarioOutOfWindowError(InputError):
    """Echo round trip does not fit inside the listen window."""


class MissingSignalPowerError(InputError):
    """Clean signal power is unknown, so noise cannot be calibrated."""


class EchoNotFoundError(ProcessingError):
    """No sample crossed the detection threshold."""


# --- MUSIC ---

class TooFewSnapshotsError(InputError):
    """Snapshot count below the channel count."""


# --- triangulation ---

class CoincidentSensorsError(InputError):
    """Both range measurements originate from the same point."""


class NoIntersectionError(ProcessingError):
    """Range circles are disjoint or nested beyond tolerance."""


class SingularGeometryError(ProcessingError):
    """Lines of sight are parallel; the position covariance is singular."""


class UnusableFallbackError(ProcessingError):
    """Fallback DoA with no circle intersection to fall back on."""


# --- datasets / files ---

class ApertureViolationError(InputError):
    """Requested angles exceed the configured aperture."""


class EmptyDatasetError(InputError):
    """Operation requires at least one record."""


class FileFormatError(InputError):
    """Generic container-format violation (bad magic, truncation...)."""


class UnsupportedVersionError(FileFormatError):
    """File declares a format version this build does not read."""


class ChecksumError(FileFormatError):
    """Stored checksum does not match the payload."""


class RateMismatchError(InputError):
    """Declared sample rate differs from the configured one."""


# --- network ---

class ShapeMismatchError(InputError):
    """Tensor shape does not match the network specification."""


class IncompatibleCheckpointError(InputError):
    """Checkpoint geometry does not match the data it is applied to."""


class TrainingDivergedError(ProcessingError):
    """Loss became non-finite during optimization."""


class NonOverlappingCurvesError(ProcessingError):
    """Estimator error curves share no common MAE range."""
