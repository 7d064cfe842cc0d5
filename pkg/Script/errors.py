"""Project exception types."""


class ParticleLabError(Exception):
    """Base exception for particle lab errors."""

    pass


class ConfigError(ParticleLabError):
    """Raised when required configuration is missing or invalid."""

    pass


class SchemaError(ConfigError):
    """Raised when an experiment spec does not match the schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvalidParameterError(ParticleLabError):
    """Raised when an operation receives an out-of-range argument."""

    pass


class StabilityError(InvalidParameterError):
    """Raised when conductance-chain step parameters break the stability bound."""

    pass


class PaddingError(InvalidParameterError):
    """Raised when a grid is too small for the requested heat convolution."""

    pass


class InfeasibleScaleError(ParticleLabError):
    """Raised when the requested scales violate a required ordering."""

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class NumericalError(ParticleLabError):
    """Raised when a linear-algebra or floating-point routine fails."""

    pass
