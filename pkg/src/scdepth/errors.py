"""Exception types raised across the package.

Every error subclasses :class:`ScdepthError` and carries the process exit
code the CLI maps it to (2 input error, 3 degenerate geometry, 4
insufficient data).
"""


class ScdepthError(ValueError):
    exit_code = 2


class DimensionError(ScdepthError):
    pass


class InvalidDepthError(ScdepthError):
    pass


class BehindCameraError(ScdepthError):
    exit_code = 3


class IllConditionedLogError(ScdepthError):
    exit_code = 3


class EmptyValidSetError(ScdepthError):
    exit_code = 3


class DegenerateScaleError(ScdepthError):
    exit_code = 3


class InvalidSceneError(ScdepthError):
    pass


class NoValidSubsequenceError(ScdepthError):
    exit_code = 4


class EmptyMaskError(ScdepthError):
    exit_code = 4
