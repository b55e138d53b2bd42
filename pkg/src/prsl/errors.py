"""Exception hierarchy shared by all prsl modules."""


class PRSLError(Exception):
    """Base class for every error raised by prsl."""


class ModelValidationError(PRSLError):
    """Raised when a model or dataset fails validation.

    The individual problems are kept in ``violations``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "invalid model")


class DistributionError(PRSLError, ValueError):
    """A probability vector is negative, non-finite, or not normalizable."""


class CalibrationError(DistributionError):
    """A calibrator produced an output that is not a valid distribution."""


class FormulaSyntaxError(PRSLError, ValueError):
    def __init__(self, message, text, position, expected=None):
        self.text = text
        self.position = position
        self.expected = expected
        detail = f"{message} at position {position}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(f"{detail}: {text!r}")


class UnresolvedAtomError(PRSLError, LookupError):
    """An atom names a label or category that does not exist."""


class AmbiguousAtomError(PRSLError, LookupError):
    """A bare category name occurs in more than one label."""


class NotADisjunctionError(PRSLError, ValueError):
    """A formula cannot be written as a disjunction of literals."""


class EngineInfeasibleError(PRSLError):
    """A state-space or enumeration guard was exceeded."""


class ContradictionError(PRSLError):
    """The evidence has probability zero under the model."""


class NumericError(PRSLError, ArithmeticError):
    """NaN, infinite or totally collapsed quantities were produced."""


class BetaSolveError(PRSLError):
    """No Beta(b1, b2) with 0 < b1, b2 < 1 meets the requested tail masses."""
