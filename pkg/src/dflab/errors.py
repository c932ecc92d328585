"""Exception hierarchy shared by all dflab modules."""


class DfLabError(Exception):
    """Base class for every error raised by dflab."""


class InputError(DfLabError, ValueError):
    """Malformed user input (expressions, specs, parameters)."""


class ExpressionSyntaxError(InputError):
    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} at position {position}"
            if text is not None:
                message += f"\n  {text}\n  {' ' * position}^"
        super().__init__(message)


class DimensionError(InputError):
    """Variable index outside 1..n, or array of the wrong size."""


class PreconditionError(InputError):
    """A numeric parameter violates the documented precondition of an operation."""


class SpecError(InputError):
    """Invalid or degenerate domain specification."""


class EvalError(DfLabError, ArithmeticError):
    """An expression was evaluated outside its domain of definition."""

    def __init__(self, message, subexpression=None):
        self.subexpression = subexpression
        if subexpression is not None:
            message = f"{message} in subexpression `{subexpression}`"
        super().__init__(message)


class NumericalError(DfLabError):
    """Internal consistency check failed or an iteration did not converge."""


class SamplingError(NumericalError):
    """Not enough sample points could be generated."""


class ProjectionError(NumericalError):
    """Newton projection onto the boundary failed."""


class NotOnBoundary(InputError):
    pass


class DegenerateGradient(NumericalError):
    pass


class LowerBoundViolated(DfLabError):
    """The lower half of the tangential sandwich inequality fails somewhere."""

    def __init__(self, message, witness=None, ratio=None):
        self.witness = witness
        self.ratio = ratio
        super().__init__(message)


class HypothesisFailed(DfLabError):
    """The strengthened plurisubharmonicity hypothesis does not hold on the tested collar."""

    def __init__(self, message, fail_fraction=None, witness=None):
        self.fail_fraction = fail_fraction
        self.witness = witness
        super().__init__(message)
