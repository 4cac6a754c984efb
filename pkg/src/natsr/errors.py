"""Exception taxonomy shared across the package.

Every failure mode surfaced by the public API maps onto one of these classes
so the CLI can translate them into its exit-code contract.
"""


class NatsrError(Exception):
    """Base class for all package errors."""


class ShapeError(NatsrError):
    """Operand dimensions are inconsistent with an operation's contract."""


class NumericError(NatsrError):
    """Non-finite values appeared where finite ones are required."""


class CurvatureError(NatsrError):
    """A damped curvature matrix could not be factorized or decomposed."""


class StateError(NatsrError):
    """Operation invoked out of sequence (e.g. backward against a stale cache)."""


class InputError(NatsrError):
    """A stream, batch or split does not satisfy an operation's preconditions."""


class ConfigError(NatsrError):
    """Unknown, missing or malformed configuration key."""


class IngestionError(NatsrError):
    """Malformed CSV input; the message names the offending line."""


class DegenerateSeriesError(NatsrError):
    """The one-step naive forecaster is exact, so scaled errors are undefined."""
