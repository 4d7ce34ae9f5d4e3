"""Exception types shared across the simulator."""


class SimulatorError(Exception):
    """Base class for all errors raised by this package."""


class MalformedRunError(SimulatorError):
    """A probe event stream violated its ordering constraints."""


class ConfigError(SimulatorError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StoreCorruptError(SimulatorError):
    """A persisted store could not be decoded."""

    def __init__(self, message: str, record: int | None = None):
        self.record = record
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)


class ImmatureKnowledgeError(SimulatorError):
    """A global-knowledge operation was attempted before enough sources merged."""


class StaleVersionError(SimulatorError):
    """Requested delta base version fell out of the retained change-log window.

    Callers must fall back to shipping a full snapshot.
    """


class UnstableStateError(SimulatorError):
    """A healing operation was invoked against the wrong application state."""


class PendingMessagesError(SimulatorError):
    """Convergence was checked while exchange messages were still in flight."""
