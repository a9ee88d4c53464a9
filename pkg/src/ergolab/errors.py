"""Exception types shared across the package."""


class ErgolabError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ErgolabError):
    """A point lies outside the domain of the system it was handed to."""


class SingularDerivativeError(ErgolabError):
    """The derivative needed for an expansion exponent does not exist or
    vanishes somewhere on the requested orbit (tent crease, critical point)."""


class RateNotEstablishedError(ErgolabError):
    """A dimension bound was requested from a non-positive decay rate; the
    exponential-decay hypothesis is not established, so no bound follows."""


class GridBudgetError(ErgolabError):
    """A cover sweep would exceed its cell-evaluation budget."""


class ValidationError(ErgolabError):
    """An experiment configuration failed validation.  The message names the
    offending field."""


class StageError(ErgolabError):
    """A pipeline stage failed.  Carries the stage name and the underlying
    cause; partial artifacts for completed stages remain available."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
