"""Exception types raised by the smoother and its helpers."""


class DsmcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DsmcError, ValueError):
    """Non-finite states or malformed arguments."""


class DominationError(DsmcError):
    """An auxiliary density vanishes where the transition density does not."""


class DegenerateWeightsError(DsmcError):
    """Every importance weight at some node is zero.

    ``node`` is ``(t,)`` for a leaf and ``(a, c, b)`` for a combine of
    ``[a, c-1]`` with ``[c, b]``; it is ``None`` when raised outside a run.
    """

    def __init__(self, message, node=None):
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)
        self.node = node


class ConfigurationError(DsmcError, ValueError):
    """Unsupported option combination, e.g. systematic resampling in a conditional run."""


class InvalidReferenceError(DsmcError, ValueError):
    """The reference trajectory of a conditional run lies outside a proposal's support."""


class LinearizationError(DsmcError, ArithmeticError):
    """A Jacobian or linearized offset is not finite."""


class IterationError(DsmcError, ArithmeticError):
    """An iterated smoother produced non-finite means."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
