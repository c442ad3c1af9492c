"""Exception types raised by the solvers."""


class EquihorError(Exception):
    """Base class for all package errors."""


class DomainError(EquihorError, ValueError):
    """An argument lies outside the domain of an operation."""


class UnsupportedProblemError(EquihorError):
    """The problem lacks data an operation needs (e.g. a closed-form tail map)."""


class StabilityError(EquihorError, ArithmeticError):
    """A backward sweep produced a non-finite value."""

    def __init__(self, message, time=None, index=None):
        super().__init__(message)
        self.time = time
        self.index = index


class CompositionError(EquihorError):
    """Two fields cannot be glued (grid or time mismatch)."""


class StructuralError(EquihorError):
    """A structural hypothesis on the cost data is violated."""


class SimulationError(EquihorError):
    """Too many simulated paths left the guard box."""
