from typing import Any, Mapping, Optional, Sequence


class SdRsmaError(Exception):
    """Base class for every error raised by the library."""


class DimensionMismatch(SdRsmaError):
    pass


class RankDeficiency(SdRsmaError):
    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class DecompositionError(SdRsmaError):
    pass


class ConfigError(SdRsmaError, ValueError):
    pass


class UnsupportedTopology(SdRsmaError):
    pass


class ConstraintViolation(SdRsmaError):
    pass


class DomainError(SdRsmaError, ValueError):
    pass


class SolverFailure(SdRsmaError):
    """Inner solver or SCA loop gave up. Keeps what it had so far."""

    def __init__(self, message: str, diagnostics: Optional[Mapping[str, Any]] = None,
                 trace: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
        self.trace = list(trace or [])


class OutputError(SdRsmaError):
    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
