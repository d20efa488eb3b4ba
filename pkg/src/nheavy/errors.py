"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class NheavyError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(NheavyError, ValueError):
    """Arguments are structurally or numerically invalid (bad shapes,
    out-of-range parameters, impossible probabilities)."""


class DataError(NheavyError, ValueError):
    """Input data cannot be used (NaNs, negative panels, parse failures,
    estimator failure on a specific observation)."""


class EvaluationError(NheavyError, RuntimeError):
    """A numerical evaluation produced an unusable result (nonpositive
    filtered variance, non-finite likelihood)."""


class ConvergenceError(NheavyError, RuntimeError):
    """An optimizer failed to converge and the caller demanded success."""
