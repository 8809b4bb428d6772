"""Exception types shared across the package."""


class EndokitError(Exception):
    """Base class for all package errors."""


class NonConvergence(EndokitError):
    """An iterative solve failed to reach its tolerance.

    Carries the iteration budget and the last residual so callers can
    decide whether to retry with a looser tolerance or a larger budget.
    """

    def __init__(self, max_iter, last_residual):
        self.max_iter = max_iter
        self.last_residual = last_residual
        super().__init__(
            f"did not converge in {max_iter} iterations "
            f"(last residual {last_residual:.3e})"
        )


class CyclicDependency(EndokitError):
    """A dependency graph that must be acyclic contains a cycle."""


class ShapeMismatch(EndokitError):
    """Tensor operands have incompatible shapes."""


class NotOnTape(EndokitError):
    """backward() was asked about a tensor the tape never recorded."""


class DimMismatch(EndokitError):
    """Vector/operator dimensions do not line up."""


class NonFinite(EndokitError):
    """A numeric computation produced NaN or infinity."""


class BadMagic(EndokitError):
    """An IDX file did not start with the expected magic number."""
