"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Base class for geometric contract violations."""


class NonPlanarInputError(ShapeError):
    """Distance matrix is not realizable by a planar point set."""


class OutOfGridError(ShapeError):
    """A coordinate falls outside the target pixel grid."""


class DegenerateShapeError(ShapeError):
    """Point configuration carries no usable geometric information."""


class InvalidCorrespondenceError(ShapeError):
    """Correspondence violates its coverage constraints or is empty."""


class NoOverlapError(ShapeError):
    """The two primaries share no doubly-covered aggregate points."""


class UndefinedOrientationError(ShapeError):
    """Aggregation center maps (numerically) onto the origin."""


class FitFailureError(RuntimeError):
    """Every optimizer start failed to produce a finite optimum."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage label."""

    def __init__(self, stage, original):
        super().__init__(f"stage '{stage}': {original}")
        self.stage = stage
        self.original = original
