"""Exception types shared across the package."""


class MaglevError(Exception):
    """Base class for all package errors."""


class DomainError(MaglevError, ValueError):
    """An argument lies outside the physical domain of an operation."""


class ContactFault(MaglevError):
    """The plate touched the electromagnet face (gap <= 0)."""


class NoEquilibriumError(MaglevError, ValueError):
    """The requested operating point cannot be held by an attracting magnet."""


class InfeasibleSpecError(MaglevError, ValueError):
    """Design specs cannot be met with non-negative, stabilising gains."""


class NoFeasibleStartError(MaglevError):
    """Every seed point of a tuning run faulted."""


class ConfigError(MaglevError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
