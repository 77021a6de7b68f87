from typing import Iterable, Optional


class EntanglementError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidSchemeError(EntanglementError, ValueError):
    """Level scheme violates a dipole selection rule or has no decay channel."""


class InvalidStateError(EntanglementError, ValueError):
    """Density matrix or state parameter outside its physical range."""


class OperatorError(EntanglementError, ValueError):
    """Collective operator requested for an invalid transition or space."""


class ConfigError(EntanglementError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = ""
        if path:
            location = f"{path}:"
        if line is not None:
            location += f"{line}:"
        super().__init__(f"{location} {message}" if location else message)


class EventLogParseError(EntanglementError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingSettingsError(EntanglementError, ValueError):
    def __init__(self, missing: Iterable[str]):
        self.missing = list(missing)
        super().__init__("missing measurement settings: " + ", ".join(self.missing))


class InsufficientDataError(EntanglementError, ValueError):
    """Counts or fit inputs too sparse for the requested estimate."""


class FitError(EntanglementError, RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)
