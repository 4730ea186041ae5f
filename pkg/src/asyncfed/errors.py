"""Exception hierarchy and warning categories shared across the package."""

from __future__ import annotations


class AsyncFedError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(AsyncFedError):
    """Parameter vectors (or batches) of incompatible lengths were combined."""


class NumericError(AsyncFedError):
    """A computation produced or received a non-finite value."""


class ParameterError(AsyncFedError):
    """A configuration or call parameter is out of its valid range."""


class SplitError(AsyncFedError):
    """A dataset split is infeasible, e.g. a label cannot cover every part."""


class MessageParseError(AsyncFedError):
    """Wire payload is not well-formed JSON."""


class ProtocolError(AsyncFedError):
    """Wire payload is valid JSON but not a known message type."""


class MessageValidationError(AsyncFedError):
    """A wire message field violates its declared range or type.

    ``field`` names the offending field with dotted path notation,
    e.g. ``content.data_description.qod``.
    """

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class StalenessInversionError(AsyncFedError):
    """A submission claims a base version not older than the aggregate it feeds."""


class AggregationPreconditionError(AsyncFedError):
    """An aggregation was invoked on input that cannot be aggregated."""


class RoundIncompleteError(AggregationPreconditionError):
    """A synchronous round is missing submissions from registered trainers."""


class RegistrationError(AsyncFedError):
    """Broker queue or worker registration conflict."""


class StorageError(AsyncFedError):
    """Object store operation against a missing bucket or invalid key."""


class ObjectNotFoundError(StorageError):
    """Requested object key does not exist."""


class ScenarioError(AsyncFedError):
    """Scenario file is malformed; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ClampWarning(UserWarning):
    """A value was clamped to keep a formula well-defined (e.g. near-zero loss)."""


class ScheduleWarning(UserWarning):
    """A schedule was queried outside its domain and clamped to the boundary."""
