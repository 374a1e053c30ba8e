"""Exception hierarchy shared across the package.

The service layer maps these onto HTTP error envelopes; everything else
raises them directly.
"""

from __future__ import annotations


class EwocError(Exception):
    """Base class for all package-specific errors."""


class DomainError(EwocError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class InvalidDesignError(EwocError, ValueError):
    """Design-level constants are mutually inconsistent."""


class DegenerateModelError(EwocError, ValueError):
    """A parameter combination collapses the dose-toxicity model."""


class DegeneratePosteriorError(EwocError):
    """Every support point has zero posterior weight."""


class ConfigError(EwocError, ValueError):
    """Trial configuration failed validation.

    ``field_errors`` maps a dotted field path to a human-readable message.
    """

    def __init__(self, field_errors: dict[str, str]):
        self.field_errors = dict(field_errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.field_errors.items()))


class ConflictError(EwocError):
    """Optimistic-concurrency or state-machine conflict (stale version,
    unknown patient, double resolution)."""


class TrialHaltedError(EwocError):
    """The trial has been halted; no further assignments are allowed."""


class EstimateUnavailableError(EwocError):
    """No MTD estimate can be produced for this trial state."""


class NotFoundError(EwocError, KeyError):
    """Requested record does not exist."""
