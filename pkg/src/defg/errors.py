"""Exception types raised across the package."""


class DefgError(Exception):
    """Base class for all errors raised by defg."""


class NotHermitianError(DefgError, ValueError):
    pass


class NotPSDError(DefgError, ValueError):
    pass


class ConvergenceError(DefgError, RuntimeError):
    """An iterative numerical routine ran out of iterations."""


class ComplexEigenvalueError(DefgError, RuntimeError):
    """Power iteration settled on a dominant eigenvalue that is not real."""


class GraphSchemaError(DefgError, ValueError):
    """A graph document does not match the JSON schema or is structurally invalid."""


class BudgetExceededError(DefgError, RuntimeError):
    def __init__(self, message, total_terms=None):
        super().__init__(message)
        self.total_terms = total_terms


class DegenerateMessageError(DefgError, RuntimeError):
    def __init__(self, message, edge=None, iteration=None):
        super().__init__(message)
        self.edge = edge
        self.iteration = iteration


class VanishingEdgeSumError(DefgError, RuntimeError):
    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class InvariantViolation(DefgError, AssertionError):
    """A message set broke non-negativity / positive semi-definiteness."""
