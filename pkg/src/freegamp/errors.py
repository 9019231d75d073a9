"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the set on which an operation is defined."""


class NumericError(ArithmeticError):
    """An iterative or quadrature computation failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ImproperBeliefError(NumericError):
    """The Gaussian belief precision (Lambda_x + A^T Lambda_z A) is not positive definite."""


class DivergedError(NumericError):
    """A solver produced non-finite values.

    ``iteration`` is the index at which it happened and ``trajectory`` holds the
    records collected up to that point.
    """

    def __init__(self, message, iteration, trajectory=None):
        super().__init__(message)
        self.iteration = iteration
        self.trajectory = trajectory
