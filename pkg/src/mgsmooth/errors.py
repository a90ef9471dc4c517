"""Exception types shared across the library.

The CLI maps these onto exit codes: ConfigError -> 1, NumericError and
subclasses -> 2, NonConvergedError -> 3.
"""


class MgError(Exception):
    pass


class ContractError(MgError):
    """A caller violated an operation precondition (spec mismatch, bad shape)."""


class ConfigError(MgError):
    """Invalid configuration: bad key, non-coarsenable size, missing smoother."""


class NumericError(MgError):
    """Numeric failure: non-finite values, eigensolver breakdown, divergence."""


class SingularMatrixError(NumericError):
    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class UnsupportedOperationError(MgError):
    """Requested analysis is undefined for this object (e.g. nonlinear model)."""


class NonConvergedError(MgError):
    """Raised only where non-convergence is a hard failure; solvers normally
    report it through their result object instead."""
