"""Exception taxonomy shared across the package.

Config problems, numerical failures and verification failures are kept
distinct because the command-line harness maps them to different exit codes.
"""


class FsilabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FsilabError):
    """Invalid, unknown or missing configuration input."""


class NumericalError(FsilabError):
    """A solve diverged, blew up or produced non-finite values."""


class StepRejected(NumericalError):
    """A time step violated the CFL bound.

    Carries the largest admissible dt so a driver can restart with it.
    """

    def __init__(self, message, admissible_dt):
        super().__init__(message)
        self.admissible_dt = admissible_dt


class VerificationError(FsilabError):
    """A structural invariant check failed."""


class EstimateUndefined(FsilabError):
    """An estimator was asked for on data where it is not defined."""
