"""Exception hierarchy shared by all ccar3 modules."""


class CCAError(Exception):
    """Base class for ccar3 errors."""


class InvalidInput(CCAError, ValueError):
    pass


class DimensionMismatch(InvalidInput):
    pass


class NotPSD(CCAError, ValueError):
    pass


class RankDeficient(CCAError, ValueError):
    pass


class InvalidGraph(InvalidInput):
    pass


class GenerationFailed(CCAError, RuntimeError):
    pass


class EmptyModel(CCAError):
    """Raised when the penalized fit selects no covariates at all."""

    def __init__(self, rho, message=None):
        self.rho = rho
        super().__init__(message or f"empty support at rho={rho!r}")


class CvFailed(CCAError, RuntimeError):
    pass
