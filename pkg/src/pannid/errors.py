"""Exception hierarchy shared by all modules."""


class PannIdError(Exception):
    """Base class for library errors."""


class MeshError(PannIdError, ValueError):
    """Malformed or invalid mesh / dataset document."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DomainError(PannIdError, ValueError):
    """A constitutive or kinematic quantity was requested outside its domain (det F <= 0)."""


class InvertedDeformationError(DomainError):
    """det(F) <= 0 at some quadrature point."""

    def __init__(self, element, step_id=None):
        msg = f"locally inverted deformation in element {element}"
        if step_id is not None:
            msg += f" (step {step_id})"
        super().__init__(msg)
        self.element = element
        self.step_id = step_id


class ConfigError(PannIdError, ValueError):
    """Inconsistent configuration (partitions, splits, run configs)."""


class SolverError(PannIdError, RuntimeError):
    """Forward solve failed to converge."""

    def __init__(self, message, last_converged=None):
        super().__init__(message)
        self.last_converged = last_converged


class NumericalError(PannIdError, FloatingPointError):
    """Non-finite loss encountered during training."""

    def __init__(self, message, step_id=None, element=None):
        super().__init__(message)
        self.step_id = step_id
        self.element = element
