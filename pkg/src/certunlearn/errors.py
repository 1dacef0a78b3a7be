"""Exception hierarchy shared by every module."""


class CertUnlearnError(Exception):
    """Base class for toolkit errors."""


class InvalidArgument(CertUnlearnError, ValueError):
    pass


class NumericalFailure(CertUnlearnError, ArithmeticError):
    pass


class CapabilityExceeded(CertUnlearnError):
    """Raised when a dense oracle would exceed its configured size limit."""


class FormatError(CertUnlearnError, ValueError):
    pass


class IntegrityError(CertUnlearnError):
    """Inputs do not match the hashes recorded alongside them."""
