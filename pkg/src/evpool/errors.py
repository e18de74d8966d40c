"""Exception types shared across the package."""


class EvPoolError(Exception):
    """Base class for all package errors."""


class ParseError(EvPoolError):
    """A malformed row or header in an input file."""


class ValidationError(EvPoolError):
    """Input parsed fine but violates a structural invariant."""


class UnknownNode(EvPoolError, KeyError):
    pass


class InvalidArgument(EvPoolError, ValueError):
    pass


class DomainError(EvPoolError, ValueError):
    """Parameters outside the mathematical domain of a formula."""


class Infeasible(EvPoolError):
    pass


class ScaleError(EvPoolError):
    """Instance too large for an exact (oracle-scale) solver."""


class CapacityViolation(EvPoolError):
    pass


class ConfigError(EvPoolError):
    pass


class NoStationInRange(EvPoolError):
    pass


class EmptyInput(EvPoolError, ValueError):
    pass
