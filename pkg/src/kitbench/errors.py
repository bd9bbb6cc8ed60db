"""Exception hierarchy. Each family maps onto one CLI exit code."""


class KitbenchError(Exception):
    exit_code = 3


class ConfigError(KitbenchError, ValueError):
    exit_code = 1


class DataError(KitbenchError, ValueError):
    exit_code = 2


class ShapeError(KitbenchError, ValueError):
    """Vector or matrix dimensions do not line up."""

    exit_code = 2


class DomainError(KitbenchError, ValueError):
    exit_code = 3


class TrainingError(KitbenchError, RuntimeError):
    exit_code = 3


class CalibrationError(KitbenchError, ValueError):
    exit_code = 3


class EvaluationError(KitbenchError, ValueError):
    exit_code = 3


class ModelFileError(KitbenchError):
    exit_code = 3


class ModelVersionError(ModelFileError):
    pass


class MalformedModelError(ModelFileError):
    pass


class ModelIOError(ModelFileError, OSError):
    pass
