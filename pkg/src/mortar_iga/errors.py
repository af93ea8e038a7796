"""Exception types raised across the library."""


class MortarIgaError(Exception):
    """Base class for all library errors."""


class DomainError(MortarIgaError):
    """A parameter or argument lies outside its admissible range."""


class UnsupportedInputError(MortarIgaError):
    """Input is valid in principle but outside the supported subset."""


class ConfigurationError(MortarIgaError):
    """Inconsistent scenario or system setup detected before assembly."""


class SingularMapError(MortarIgaError):
    """Geometric map has a non-positive Jacobian determinant."""

    def __init__(self, message, xi=None):
        super().__init__(message)
        self.xi = xi


class InversionError(MortarIgaError):
    """Point inversion did not converge (point may lie outside the patch)."""


class EmbeddingError(MortarIgaError):
    """A fiber centerline point could not be located inside the host patch."""


class ElementInversionError(MortarIgaError):
    """det F <= 0 encountered during material evaluation."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DegenerateQuaternionError(MortarIgaError):
    """Quaternion norm too small to define a rotation."""


class CondensationError(MortarIgaError):
    """Constraint coupling matrix is singular; multiplier space is defective."""


class LinearSolveError(MortarIgaError):
    """Sparse factorization or triangular solve failed."""


class SingularSystemError(LinearSolveError):
    """Saddle-point system is singular or numerically near-singular."""


class DivergenceError(MortarIgaError):
    """Newton iteration diverged."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
