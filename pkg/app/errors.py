"""
Exception hierarchy for the AdapTBF simulator.

Every error carries a short stable ``code`` so the CLI can print a single
greppable line (``error[E_...]: message``) before exiting nonzero.
"""
from typing import Optional


class AdapTbfError(Exception):
    """Base class for all simulator errors."""

    code = "E_ADAPTBF"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        """Render the error as a single machine-greppable line."""
        flat = " ".join(self.message.split())
        return f"error[{self.code}]: {flat}"


class EmptyActiveSetError(AdapTbfError):
    """Raised when an allocation step is asked to run with no active jobs."""

    code = "E_EMPTY_ACTIVE_SET"


class ContractViolationError(AdapTbfError):
    """Raised when a caller breaks an operation's pre-condition."""

    code = "E_CONTRACT"


class LedgerConsistencyError(AdapTbfError):
    """Raised when a plan references jobs the ledger does not know."""

    code = "E_LEDGER"


class ProtocolError(AdapTbfError):
    """Raised when snapshot / commit / clear are called out of order."""

    code = "E_PROTOCOL"


class ComparisonError(AdapTbfError):
    """Raised when two runs cannot be compared."""

    code = "E_COMPARE"


class BuiltinNotFoundError(AdapTbfError):
    """Raised for an unknown builtin scenario name."""

    code = "E_BUILTIN"


class CliUsageError(AdapTbfError):
    """Raised for invalid command-line arguments."""

    code = "E_USAGE"


class ScenarioNotFoundError(AdapTbfError):
    """Raised when a scenario file does not exist."""

    code = "E_NOT_FOUND"


class ScenarioValidationError(AdapTbfError):
    """Raised when a scenario document fails to parse or validate."""

    code = "E_SCENARIO"

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        key_path: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        location = ""
        if path:
            location = path
            if line is not None:
                location += f":{line}"
                if column is not None:
                    location += f":{column}"
            location += ": "
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(f"{location}{message}")
        self.path = path
        self.key_path = key_path
        self.line = line
        self.column = column
