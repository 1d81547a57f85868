"""Exception types shared across the package."""


class DivergenceError(RuntimeError):
    """A forward or backward integration blew up (unstable step size)."""

    def __init__(self, message, iteration=None, round_index=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        if round_index is not None:
            message = f"{message} (anneal round {round_index})"
        super().__init__(message)
        self.iteration = iteration
        self.round_index = round_index


class LineSearchError(RuntimeError):
    """No candidate step size improved the incumbent cost."""


class ConfigError(ValueError):
    """A run configuration file is malformed or inconsistent."""
