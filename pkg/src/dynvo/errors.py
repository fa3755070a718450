"""Exception types raised across the package."""


class DynVOError(Exception):
    """Base class for all errors raised by dynvo."""


class InvalidArgument(DynVOError, ValueError):
    pass


class InvalidDepth(InvalidArgument):
    pass


class BehindCamera(DynVOError, ValueError):
    pass


class EmptyDepth(DynVOError, ValueError):
    pass


class InsufficientOverlap(DynVOError, RuntimeError):
    """Too few valid residuals to constrain a pose.

    ``pose`` carries the best estimate reached before the failure, if any.
    """

    def __init__(self, message, pose=None):
        super().__init__(message)
        self.pose = pose


class DegenerateGeometry(DynVOError, RuntimeError):
    def __init__(self, message, pose=None):
        super().__init__(message)
        self.pose = pose


class DatasetIOError(DynVOError, OSError):
    pass


class EmptyAssociation(DynVOError, ValueError):
    pass


class FormatError(DynVOError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientData(DynVOError, ValueError):
    pass


class DegenerateScene(DynVOError, ValueError):
    pass
