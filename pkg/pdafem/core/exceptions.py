"""
Custom Exceptions
Application-specific exception classes
"""
from typing import Optional


class AppException(Exception):
    """Base application exception"""

    def __init__(self, message: str, exit_code: int = 1):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ConfigError(AppException):
    """Invalid run configuration"""

    def __init__(self, message: str = "Invalid configuration"):
        super().__init__(message, exit_code=2)


class ValidationError(AppException):
    """Invalid input data for an operation"""

    def __init__(self, message: str = "Validation failed"):
        super().__init__(message, exit_code=2)


class MeshError(AppException):
    """Malformed or unsupported triangulation"""

    def __init__(self, message: str = "Invalid mesh"):
        super().__init__(message, exit_code=2)


class SpaceMismatchError(AppException):
    """Finite element functions live on incompatible spaces"""

    def __init__(self, message: str = "Functions live on different meshes or spaces"):
        super().__init__(message, exit_code=1)


class InfeasibleError(AppException):
    """A dual candidate violates its constraint"""

    def __init__(
        self,
        message: str = "Infeasible dual function",
        worst_index: Optional[int] = None,
        violation: float = float("nan")
    ):
        self.worst_index = worst_index
        self.violation = violation
        super().__init__(message, exit_code=3)


class IncompatibleDataError(AppException):
    """Source data violates a compatibility condition"""

    def __init__(self, message: str = "Incompatible data"):
        super().__init__(message, exit_code=2)


class SolverError(AppException):
    """Linear or local solver failure"""

    def __init__(self, message: str = "Solver failure"):
        super().__init__(message, exit_code=3)


class ExportError(AppException):
    """Writing results failed"""

    def __init__(self, message: str = "Export failed", path: Optional[str] = None):
        self.path = path
        if path:
            message = f"{message}: {path}"
        super().__init__(message, exit_code=1)


def handle_exception(exc: AppException) -> int:
    """
    Convert application exception to a process exit code

    Args:
        exc: Application exception

    Returns:
        Exit code for the command-line interface
    """
    return exc.exit_code
