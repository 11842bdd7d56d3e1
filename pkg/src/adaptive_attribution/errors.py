"""Exception hierarchy shared by all modules."""


class AttributionError(Exception):
    """Base class for errors raised by this package."""


class DomainError(AttributionError, ValueError):
    """An argument lies outside its admissible range."""


class ConditioningError(AttributionError, ValueError):
    """Conditioning on a prefix that has zero baseline probability."""


class NumericError(AttributionError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""

    def __init__(self, message, round=None):
        super().__init__(message)
        self.round = round


class SupportInstabilityError(AttributionError):
    """The support of the future law moves with the perturbation."""


class OverlapError(AttributionError):
    """A perturbed-supported continuation has zero baseline mass."""

    def __init__(self, message, witness=None, round=None):
        super().__init__(message)
        self.witness = witness
        self.round = round


class RegimeError(AttributionError):
    """A configuration violates the preconditions of a bound."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ConfigError(AttributionError):
    """An experiment configuration failed to parse or validate."""
