"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration file or object is invalid."""


class DynamicsInputError(ValueError):
    """Bad input to a dynamics routine (shape mismatch, non-finite values, bad index)."""


class SimulationDiverged(RuntimeError):
    """The integrator produced a non-finite state."""


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or another unrecoverable condition."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, has the wrong version or does not fit."""


class UnsteadyError(ValueError):
    """No stable segment could be found in a velocity signal."""


class UndefinedCoTError(ValueError):
    """Cost of transport is undefined because the mean speed is too small."""


class CheckpointMismatch(CheckpointError):
    """A valid checkpoint does not match the requested dimensions or constraint set."""


class MetricsInputError(ValueError):
    """Bad input to a metric (too few samples, non-positive constants, empty sets)."""
