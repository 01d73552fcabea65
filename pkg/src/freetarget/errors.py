"""Exception hierarchy. Every solver failure derives from ``SolverError``."""


class FreeTargetError(Exception):
    pass


class GridMismatch(FreeTargetError, ValueError):
    pass


class OutOfDomain(FreeTargetError, ValueError):
    pass


class SolverError(FreeTargetError):
    pass


class NonConvergence(SolverError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DomainTooSmall(SolverError):
    pass


class NonExtinction(SolverError):
    pass


class IncompleteFlow(SolverError):
    pass


class BoxEscape(SolverError):
    pass


class ConfigError(FreeTargetError, ValueError):
    pass
