"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Raised when an experiment configuration is malformed or inconsistent."""


class DivergenceError(RuntimeError):
    """Raised when a trajectory produces non-finite parameters.

    `step` is the local-SGD step at which the blow-up occurred (or None when
    it happened in the server update); `round_index` is filled in by the
    training loop.
    """

    def __init__(self, message, step=None, round_index=None):
        super().__init__(message)
        self.step = step
        self.round_index = round_index


class UnsupportedModelError(ValueError):
    """Raised when an operation has no closed form for the given model kind."""
