"""Exception types raised by the localization engine"""


class SemlocError(RuntimeError):
    """Base class for every error raised by this package"""


class ConfigError(SemlocError, ValueError):
    pass


class FormatError(SemlocError):
    """Malformed map, frame, odometry or trajectory file"""


class AmbiguousRotation(SemlocError):
    """Rotation angle too close to pi for a unique logarithm"""


class BehindCamera(SemlocError):
    pass


class InvalidDepth(SemlocError):
    pass


class InvalidLabel(SemlocError):
    pass


class DimensionError(SemlocError):
    pass


class OutOfBounds(SemlocError):
    pass


class DegenerateLevel(SemlocError):
    """Too few usable residuals to constrain six degrees of freedom"""


class SolverFailure(SemlocError):
    pass


class NotInitialized(SemlocError):
    pass


class LostTracking(SemlocError):
    pass


class EmptyInput(SemlocError, ValueError):
    pass


class IdMismatch(SemlocError):
    """Ground truth and estimate trajectories cover different frame ids"""
