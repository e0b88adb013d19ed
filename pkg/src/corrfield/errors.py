"""Exception types shared across the package.

Data-shaped problems (bad inputs, bad files) derive from ``DataError``;
failures of the numerical pipeline derive from ``NumericalError``. The CLI
maps these to exit codes 2 and 3 respectively.
"""


class CorrfieldError(Exception):
    """Base class for all package-specific errors."""


class DataError(CorrfieldError):
    """Invalid input data, file contents, or configuration."""


class NumericalError(CorrfieldError):
    """A numerical procedure failed (degenerate input, divergence, ...)."""


class BehindCameraError(DataError):
    """A 3D point with z <= 0 was passed to a projection."""


class DegenerateConfigurationError(NumericalError):
    """Point configuration too degenerate for rigid alignment."""


class InsufficientCorrespondencesError(DataError):
    """Fewer than three 3D-3D correspondences supplied."""


class NoPoseFoundError(NumericalError):
    """No RANSAC hypothesis ever reached a usable consensus."""


class NotWatertightError(DataError):
    """Mesh is not watertight, so the signed-distance sign is undefined."""


class SamplingError(NumericalError):
    """Query-point sampling could not satisfy the requested counts."""


class NoCorrespondencesError(NumericalError):
    """Field evaluation produced no near-surface predictions."""


class ObjectInvisibleError(NumericalError):
    """Both visibility masks are empty; the pose error is undefined."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite; the last finished epoch is kept.

    Attributes:
        network: state of the field network after the last finished epoch.
        log: per-epoch log records accumulated before the failure.
    """

    def __init__(self, message, network=None, log=None):
        super().__init__(message)
        self.network = network
        self.log = log if log is not None else []
