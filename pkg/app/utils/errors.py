class LabError(ValueError):
    """Base class for every error raised by tunelab."""


class InvalidDimensionError(LabError):
    pass


class InvalidIndexError(LabError):
    pass


class InvalidArgumentError(LabError):
    pass


class ConfigError(LabError):
    pass


class NumericalError(LabError):
    """Failures of the numerics themselves (CLI exit code 2)."""


class InvalidValueError(NumericalError):
    pass


class SingularGeneratorError(NumericalError):
    pass


class DegenerateVarianceError(NumericalError):
    pass


class NonFiniteObjectiveError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"Training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


class SweepRunError(LabError):
    """A single (k, trial) run of a sweep failed; the cause is chained."""

    def __init__(self, k: int, trial: int, cause: Exception):
        super().__init__(f"Run k={k} trial={trial} failed: {cause}")
        self.k = k
        self.trial = trial
        self.cause = cause
