"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violates the documented contract of an operation."""


class OutOfBoundsError(ContractError):
    pass


class MissingDepthError(ContractError):
    pass


class ConfigError(ValueError):
    pass


class InvalidMaskError(ValueError):
    pass


class AmbiguousAxisError(ValueError):
    pass


class NoIntersectionError(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


class DataFormatError(ValueError):
    """A file on disk is missing, truncated or fails validation.

    ``field`` names the offending sample field (``"depth"``, ``"label"``, ...).
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingDivergedError(RuntimeError):
    pass
