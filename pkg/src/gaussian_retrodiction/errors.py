"""Exception types raised across the package."""


class InputError(ValueError):
    """Malformed or inconsistent input (shapes, symmetry, ranges)."""


class IntegrationInstabilityError(RuntimeError):
    """A covariance left the physical region during integration."""


class SingularFormError(ValueError):
    """A Gaussian cannot be converted between covariance and information form."""


class DegenerateDistributionError(ValueError):
    """Both marginal variances vanish, so the past distribution is undefined."""


class TruncationError(RuntimeError):
    """Population leaked into the top levels of a truncated Fock space."""


class StepSizeError(RuntimeError):
    """An oracle step lost too much trace; the time step is too large."""
