"""Exception types shared across the package."""


class InvalidFactorError(ValueError):
    """Factor matrices have incompatible shapes or non-finite entries."""


class ShapeMismatchError(ValueError):
    """Operator input/output shapes do not line up."""


class UnsupportedOperatorError(TypeError):
    """Operator cannot be reduced to the requested form (e.g. entry sampling)."""


class GradientUndefinedError(ArithmeticError):
    """Penalty gradient is undefined at this residual (two-norm at zero).

    Callers treat this as "residual is zero, subproblem solved".
    """


class ProjectionError(RuntimeError):
    """Newton/bisection on the weighted-ball multiplier failed to converge."""


class DivergenceError(RuntimeError):
    """Subproblem iteration produced a non-finite objective."""


class DerivativeUncertainError(RuntimeError):
    """Power iteration for the value-function slope did not converge."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. SNR of a zero reference)."""


class TripletParseError(ValueError):
    """A ratings-triplet file could not be parsed."""
