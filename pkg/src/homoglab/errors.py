"""Exception types shared by the solver modules."""


class HomoglabError(Exception):
    """Base class for all package errors."""


class ContractViolation(HomoglabError, ValueError):
    """An input broke a documented precondition (bad shape, bad constant, ...)."""


class IntegrandError(HomoglabError, ArithmeticError):
    """An integrand produced a non-finite value.

    ``point`` carries the offending (x, y, z, xi) sample when it is known.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SolverError(HomoglabError, RuntimeError):
    """A minimizer stopped without meeting its tolerance.

    The best iterate seen so far is kept so callers can still report it.
    """

    def __init__(self, message, best_value=None, best_corrector=None,
                 residual=None, partial=None):
        super().__init__(message)
        self.best_value = best_value
        self.best_corrector = best_corrector
        self.residual = residual
        self.partial = partial


class BudgetExhausted(SolverError):
    """Nested evaluation hit its configured limit on inner solves."""
