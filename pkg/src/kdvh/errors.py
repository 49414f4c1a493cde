"""Exception types shared across the solver modules."""


class NumericalError(RuntimeError):
    """A computation finished without producing a trustworthy result."""


class StageSolveError(NumericalError):
    """An implicit stage system could not be solved to tolerance."""

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message if stage is None else f"stage {stage}: {message}")
        self.stage = stage


class ConvergenceError(NumericalError):
    """An iterative method failed to converge."""


class ConfigError(ValueError):
    """Invalid run configuration (unknown method, bad parameter, malformed file)."""
