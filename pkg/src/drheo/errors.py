"""Exception types raised by the solver and the certificate harness."""


class DrheoError(Exception):
    pass


class DomainError(DrheoError, ValueError):
    """A tensor or field argument is non-finite or has the wrong shape."""


class ConfigurationError(DrheoError, ValueError):
    pass


class InputError(DrheoError, ValueError):
    pass


class SequencingError(DrheoError, ValueError):
    """Ledger records were supplied out of time order."""


class StabilityError(DrheoError, RuntimeError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class CertificateViolation(DrheoError):
    pass
