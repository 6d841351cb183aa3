"""Exception and warning types raised by the solvers."""

from __future__ import annotations

import numpy as np


class SolverError(RuntimeError):
    """Base class for numerical failures inside a solve."""


class NoBracket(SolverError, ValueError):
    """Root finder was given an interval whose end values share a sign."""


class MaxIterExceeded(SolverError):
    """An iterative method ran out of iterations.

    The last iterate and its residual are kept so callers can decide
    whether the partial answer is usable.
    """

    def __init__(self, message: str, iterate: np.ndarray | float | None = None,
                 residual: float = float("nan")):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class SingularPivot(SolverError):
    """Zero (or vanishing) pivot met during tridiagonal elimination."""


class GridMismatch(ValueError):
    """Two surfaces or a surface and a grid do not share the same nodes."""


class NotConstantIntensity(ValueError):
    """A closed form was requested for a model with state-dependent intensity."""


class WindowEmpty(ValueError):
    """The admissible stopping window of a rolling problem contains no grid time."""


class InvalidPolicy(ValueError):
    """Unrecognised or inconsistent switching policy for the Monte Carlo engine."""


class ConfigError(ValueError):
    """Malformed scenario configuration."""


class UnknownScenario(ConfigError):
    """Scenario or preset name not recognised."""


class NonDominantMatrix(RuntimeWarning):
    """An assembled implicit system lost strict diagonal dominance."""
