"""Exception types shared across the package."""


class SrrdError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SrrdError, ValueError):
    """Caller passed an argument that violates a precondition."""


class InvalidTransformError(SrrdError, ValueError):
    """Rotation matrix is not orthonormal with determinant +1."""


class RejectedCenterError(SrrdError, ValueError):
    """Requested patch center does not lie inside a labeled bone."""


class OutOfFovError(SrrdError, ValueError):
    """Requested patch (or its warped counterpart) exceeds the volume domain."""


class VolumeIOError(SrrdError, IOError):
    """Malformed or unreadable volume file.

    ``offset`` is the byte offset of the offending header field when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateInputError(SrrdError, ValueError):
    """Input is degenerate for the requested computation (e.g. constant patch)."""


class InvalidConfigError(SrrdError, ValueError):
    """Configuration violates an invariant (e.g. unordered grade means)."""


class ComponentTooSmallError(SrrdError, ValueError):
    """A labeled component has too few voxels to register."""


class ModelNotReadyError(SrrdError, RuntimeError):
    """A learned model was requested before it was trained/loaded."""


class InvalidComparisonError(SrrdError, ValueError):
    """Ablation arms were computed on mismatched folds."""


class StageFailure(SrrdError, RuntimeError):
    """A pipeline stage failed; carries the stage name and artifact path."""

    def __init__(self, stage: str, path: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed at {path}: {cause}")
        self.stage = stage
        self.path = path
        self.cause = cause
