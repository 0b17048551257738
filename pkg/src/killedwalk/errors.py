"""Exception hierarchy.

Every error carries a short ``kind`` slug; the CLI mirrors it into
``summary.json`` and maps the class to an exit code.
"""

from __future__ import annotations


class KilledWalkError(Exception):
    kind = "error"


class ConfigError(KilledWalkError, ValueError):
    """Configuration could not be parsed or validated (CLI exit code 2)."""

    kind = "config-error"


class InvalidSpec(ConfigError):
    """A law or mechanism description violates one of its invariants."""

    kind = "invalid-spec"


class IncompatibleMechanism(ConfigError):
    """The exact lattice oracle cannot represent the requested model."""

    kind = "incompatible-mechanism"


class RuntimeFailure(KilledWalkError, RuntimeError):
    """A well-formed run failed while executing (CLI exit code 3)."""

    kind = "runtime-error"


class ZeroSurvival(RuntimeFailure):
    kind = "zero-survival"


class TooFewSurvivors(RuntimeFailure):
    kind = "too-few-survivors"


class StepCapExceeded(RuntimeFailure):
    kind = "step-cap-exhausted"


class TooLargeInstance(RuntimeFailure):
    kind = "too-large-instance"


class UProviderError(RuntimeFailure):
    """The u-function provider was queried outside its covered range."""

    kind = "u-undefined"

    def __init__(self, message: str, height: float | None = None):
        super().__init__(message)
        self.height = height
