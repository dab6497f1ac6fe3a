"""Exception types shared across the package."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity appeared in a forward pass, gradient or training step."""

    def __init__(self, message, layer=None, epoch=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.step = step


class SingularSystemError(ArithmeticError):
    """The normal matrix of the selected columns is numerically singular."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class IncompatibleEmbeddingError(ValueError):
    """Embedding matrices built from different parameter samples or projections were mixed."""


class ConfigError(ValueError):
    """Invalid run configuration."""
