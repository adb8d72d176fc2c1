"""Exception hierarchy shared by all pricing modules."""


class PricingError(Exception):
    """Base class for every error raised by thetaprice."""


class OutOfDomain(PricingError, ValueError):
    pass


class QuadratureFailure(PricingError):
    pass


class InvalidParameter(PricingError, ValueError):
    pass


class BlowUp(PricingError):
    """Riccati solution left the admissible range before the horizon."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class EmptyPayoffRegion(PricingError):
    pass


class NumericalOverflow(PricingError, OverflowError):
    pass


class SingularSystem(PricingError):
    pass


class NoConvergence(PricingError):
    """Iteration stopped at ``max_iter``; ``best`` holds the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class BarrierBreached(PricingError, ValueError):
    pass


class InstabilityDetected(PricingError):
    pass


class ConfigError(PricingError, ValueError):
    pass


class LatticeMismatch(PricingError, ValueError):
    pass


class ValidityWarning(UserWarning):
    """Small-drift approximation used outside its validity range."""


class InvalidNome(InvalidParameter):
    pass
