"""Exception hierarchy. Every error carries a stable machine-readable code."""


class ImpliedWeightsError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DataError(ImpliedWeightsError):
    """Bad input data: missing files, unparsable cells, role violations."""

    code = "data"


class FormulaError(ImpliedWeightsError):
    """Formula syntax or semantic error; ``position`` indexes into the text."""

    code = "formula"

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class SingularDesignError(ImpliedWeightsError):
    """A required linear system is singular after aliasing."""

    code = "linalg/singular"


class EstimationError(ImpliedWeightsError):
    """Outcome-model fitting or inference failed."""

    code = "estimation"


class ConvergenceError(ImpliedWeightsError):
    """An iterative solver diverged (e.g. separated logistic regression)."""

    code = "convergence"


class SpecificationError(ImpliedWeightsError):
    """Invalid combination of method / estimand / focal / contrast options."""

    code = "specification"


class VerificationError(ImpliedWeightsError):
    """Oracle cross-check disagreed with the production computation."""

    code = "verify"
