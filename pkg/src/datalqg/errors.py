"""Exception types shared across the library."""


class DataLqgError(Exception):
    """Base class for all library errors."""


class NumericalFailure(DataLqgError):
    """A numerical kernel produced non-finite values or failed to converge."""


class ConfigError(DataLqgError):
    """Invalid configuration value, unknown key, or unknown benchmark id."""


class ArtifactError(DataLqgError):
    """Malformed or inconsistent artifact file."""

    def __init__(self, message, path=None, line=None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class OptimizationFailure(DataLqgError):
    """Cost diverged during descent; carries the last finite iterate."""

    def __init__(self, message, last_controls=None, last_cost=None):
        super().__init__(message)
        self.last_controls = last_controls
        self.last_cost = last_cost


class IdentificationError(DataLqgError):
    """System identification failed (rank deficiency, bad data) at a given step."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class DesignFailure(DataLqgError):
    """Feedback or filter design failed (loss of positive definiteness) at a step."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
