"""Exception hierarchy shared by every module of the package."""


class GuardError(Exception):
    """Base class for all errors raised by ttrl_guard."""


class ContractError(GuardError, ValueError):
    """An argument violates the documented pre-conditions of an operation."""


class MalformedBatchError(ContractError):
    """A rollout batch is empty or its counts do not add up to ``k``."""


class ConfigurationError(GuardError, ValueError):
    """A configuration value is out of range, unknown, or infeasible."""


class InsufficientHistoryError(GuardError, ValueError):
    """Too few checkpoints to compute initial/final label accuracy."""


class LogParseError(GuardError, ValueError):
    """A trajectory log line does not match the JSONL schema."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class ReportError(GuardError, ValueError):
    """Summaries passed to the report renderer are inconsistent."""
