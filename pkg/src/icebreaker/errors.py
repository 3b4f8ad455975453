"""Exception hierarchy shared by every module."""


class IcebreakerError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ConfigError(IcebreakerError, ValueError):
    pass


class FormatError(IcebreakerError, ValueError):
    pass


class DataError(IcebreakerError, ValueError):
    pass


class IoError(IcebreakerError, OSError):
    pass


class DegenerateInput(IcebreakerError, ValueError):
    pass


class SamplingError(IcebreakerError, ValueError):
    pass


class ShapeError(IcebreakerError, ValueError):
    pass


class BatchError(IcebreakerError, ValueError):
    pass


class NumericalError(IcebreakerError, ArithmeticError):
    pass


class TrainingDiverged(IcebreakerError, RuntimeError):
    pass


class EvalError(IcebreakerError, ValueError):
    pass
