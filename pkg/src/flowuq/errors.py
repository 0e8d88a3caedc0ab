"""Exception types shared across the package."""


class FlowUQError(Exception):
    """Base class for all flowuq errors."""


class DimensionMismatchError(FlowUQError, ValueError):
    """Operands have incompatible shapes."""


class SingularTimeError(FlowUQError, ValueError):
    """A path quantity is undefined at the requested time."""


class NonFiniteError(FlowUQError, ArithmeticError):
    """A NaN or infinity appeared where a finite value is required."""


class UnknownClassError(FlowUQError, ValueError):
    """A condition id is outside the model's class range."""


class DegenerateDataError(FlowUQError, ValueError):
    """A point set is degenerate (e.g. all duplicates) for the metric."""


class InsufficientSamplesError(FlowUQError, ValueError):
    """Too few samples for the requested evaluation."""


class ConfigError(FlowUQError, ValueError):
    """A run configuration failed validation.

    Carries one message per offending field so the CLI can report all
    problems at once.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
