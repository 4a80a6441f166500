"""Exception hierarchy shared by every stage of the pipeline."""


class SasdError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(SasdError, ValueError):
    pass


class EmptyCropError(GeometryError):
    def __init__(self, message: str = "empty crop"):
        super().__init__(message)


class QueryError(SasdError, ValueError):
    pass


class PatchTooSmallError(SasdError, ValueError):
    def __init__(self, message: str = "patch below minimum size"):
        super().__init__(message)


class BackendError(SasdError):
    """An embedding backend failed; ``diagnostics`` carries backend detail."""

    def __init__(self, message: str, diagnostics: str | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics


class RoiTooSmallError(SasdError, ValueError):
    def __init__(self, message: str = "ROI too small to refine"):
        super().__init__(message)


class PlacementError(SasdError, ValueError):
    def __init__(self, message: str = "placement infeasible"):
        super().__init__(message)


class ManifestError(SasdError, ValueError):
    """Malformed suite manifest; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EvaluationError(SasdError, ValueError):
    pass


class ConfigError(SasdError, ValueError):
    """Bad configuration file, key or value."""
