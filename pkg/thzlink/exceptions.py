class ThzLinkError(Exception):
    """Base class for link simulator errors"""


class DomainError(ThzLinkError, ValueError):
    """Argument outside the domain of an operation"""


class FieldValidationError(DomainError):
    """Field file or field arrays violate the grid invariants"""


class ConfigError(ThzLinkError, ValueError):
    """Scenario or experiment configuration is invalid"""


class InfeasibleError(ThzLinkError):
    """No flight plan satisfies the average-Mach floor"""


class NumericalError(ThzLinkError, ArithmeticError):
    """Non-finite state, divergence or runaway search"""
