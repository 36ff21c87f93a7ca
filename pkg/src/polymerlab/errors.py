"""Exception types shared across the package."""


class PolymerLabError(Exception):
    """Base class for package-specific failures."""


class ResourceLimitError(PolymerLabError):
    """A requested allocation exceeds the configured memory cap."""

    def __init__(self, required_bytes: int, cap_bytes: int):
        self.required_bytes = int(required_bytes)
        self.cap_bytes = int(cap_bytes)
        super().__init__(
            f"allocation of {self.required_bytes} bytes exceeds cap of "
            f"{self.cap_bytes} bytes"
        )


class CoverageError(PolymerLabError):
    """A path left the noise box (minus the mollifier margin)."""

    def __init__(self, first_bad_time: float, message: str = ""):
        self.first_bad_time = float(first_bad_time)
        super().__init__(
            message or f"path exits noise box margin at t={self.first_bad_time:g}"
        )


class FactorizationError(PolymerLabError):
    """Covariance factorization failed even after the jitter ladder."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"covariance factorization failed; minimum eigenvalue "
            f"{self.min_eigenvalue:.3e}"
        )


class SolverError(PolymerLabError):
    """An iterative solver stopped without reaching its residual target."""

    def __init__(self, residual: float, tol: float):
        self.residual = float(residual)
        self.tol = float(tol)
        super().__init__(
            f"solver did not converge: residual {self.residual:.3e} > tol {self.tol:.3e}"
        )


class ConfigError(PolymerLabError):
    """Experiment configuration failed validation. Carries the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
