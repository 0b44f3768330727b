"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """Dimension or shape mismatch in a call."""


class NumericalInputError(ValueError):
    """Non-finite state or control values handed to an integrator."""


class DegenerateGeometryError(ArithmeticError):
    """Cost derivative requested where the geometry is not differentiable.

    Raised at zero inter-player distance or exactly on a polyline kink.
    """

    def __init__(self, message: str, time_index: int | None = None):
        super().__init__(message)
        self.time_index = time_index

    def __str__(self) -> str:
        base = super().__str__()
        if self.time_index is None:
            return base
        return f"{base} (time index {self.time_index})"


class SolveFailure(ArithmeticError):
    """The coupled linear system of an LQ game step is singular or ill-conditioned."""

    def __init__(self, message: str, time_index: int | None = None, rcond: float | None = None):
        super().__init__(message)
        self.time_index = time_index
        self.rcond = rcond

    def __str__(self) -> str:
        base = super().__str__()
        if self.time_index is None:
            return base
        return f"{base} (time index {self.time_index})"


class DivergenceError(RuntimeError):
    """A rollout produced non-finite states."""

    def __init__(self, message: str, time_index: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.time_index = time_index
        self.iteration = iteration


class ScenarioError(ValueError):
    """Invalid scenario configuration.

    ``field`` is a dotted path into the document, ``line`` the 1-based line
    number when it could be located.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.message = message
        self.field = field
        self.line = line
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if field:
            parts.append(field)
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class EpisodeError(RuntimeError):
    """Receding-horizon episode aborted because a replan failed."""

    def __init__(self, message: str, replan_index: int):
        super().__init__(f"replan {replan_index}: {message}")
        self.replan_index = replan_index
