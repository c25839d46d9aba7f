"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(RuntimeError):
    """An iterative method blew up.

    ``step`` is the iteration at which the blow-up was detected. Drivers attach
    the partial trace as ``trace`` before re-raising.
    """

    def __init__(self, message, step=None):
        self.step = step
        self.trace = None
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
