"""Exception hierarchy shared by every module of the toolkit."""


class RSError(Exception):
    """Base class for all toolkit errors."""


# chain
class GeneratorError(RSError, ValueError):
    pass


class EmptyMatrix(GeneratorError):
    pass


class NegativeOffDiagonal(GeneratorError):
    pass


class RowSumNonzero(GeneratorError):
    pass


class ReducibleChain(RSError, ValueError):
    pass


class NegativeTime(RSError, ValueError):
    pass


class RateBoundViolated(RSError, RuntimeError):
    pass


class CouplingTimeout(RSError, RuntimeError):
    pass


# sde
class NonFiniteState(RSError, FloatingPointError):
    def __init__(self, time, regime, message=None):
        self.time = time
        self.regime = regime
        super().__init__(message or f"non-finite state at t={time:g} in regime {regime}")


class StepTooLarge(RSError, ValueError):
    pass


class InvalidExponent(RSError, ValueError):
    pass


class StateDependentDiffusion(RSError, ValueError):
    pass


# coupling / distance
class UnsupportedModel(RSError, ValueError):
    pass


class InvalidProfile(RSError, ValueError):
    pass


class DegenerateProbe(RSError, ValueError):
    pass


class ThresholdTooSmall(RSError, ValueError):
    pass


class LengthMismatch(RSError, ValueError):
    pass


class EmptySample(RSError, ValueError):
    pass


# lyapunov
class NonFiniteDerivative(RSError, FloatingPointError):
    pass


class InfeasibleBeta(RSError, ValueError):
    pass


class InfeasibleM(RSError, ValueError):
    pass


class NoFeasibleZeta(RSError, ValueError):
    pass


# rates
class NonPositiveTheta(RSError, ValueError):
    pass


class LevelOutOfRange(RSError, ValueError):
    pass


class NonNegativeMixture(RSError, ValueError):
    pass


class InsufficientData(RSError, ValueError):
    pass


class NonPositiveValue(RSError, ValueError):
    pass


class InversionFailed(RSError, RuntimeError):
    pass


# subordination
class NonPositiveArgument(RSError, ValueError):
    pass


class MomentBlowup(RSError, ArithmeticError):
    pass


class HorizonExceeded(RSError, ValueError):
    pass


# experiments
class ConfigError(RSError, ValueError):
    pass


class UnknownExperiment(ConfigError):
    pass


class ExperimentFailed(RSError, RuntimeError):
    """Wraps a module error with the name of the experiment that raised it."""

    def __init__(self, experiment, cause):
        self.experiment = experiment
        self.cause = cause
        super().__init__(f"experiment {experiment!r} failed: {type(cause).__name__}: {cause}")
