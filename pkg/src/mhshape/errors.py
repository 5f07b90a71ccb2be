"""Exception hierarchy for mhshape.

Validation errors signal bad user input (meshes, files, parameters);
numerical errors signal failures inside solvers. The CLI maps the two
groups to distinct exit codes.
"""


class MhshapeError(Exception):
    """Base class for all package errors."""


class ValidationError(MhshapeError):
    """Invalid input data (mesh, file, parameter)."""


class NonManifoldEdge(ValidationError):
    """An edge is incident to a number of faces different from two."""


class NonManifoldVertex(ValidationError):
    """A vertex whose incident faces do not form a single closed fan."""


class InconsistentOrientation(ValidationError):
    """A directed edge appears more than once across faces."""


class DegenerateFace(ValidationError):
    """A face with a repeated vertex index or zero area."""


class ParseError(ValidationError):
    """Malformed input file; carries a line number where possible."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(ValidationError):
    """Barycentric point outside the closed reference triangle."""


class UnsupportedDegree(ValidationError):
    """No quadrature rule of the requested polynomial degree."""


class BasisMeshMismatch(ValidationError):
    """Spectrum/basis built on a different mesh than the one supplied."""


class DirectionMismatch(ValidationError):
    """Two far-field patterns with different direction sets."""


class InsufficientData(ValidationError):
    """Dataset lacks the channels required by the operation."""


class EmptySelection(ValidationError):
    """Thresholding selected no voxels."""


class NumericalError(MhshapeError):
    """Failure inside a numerical routine."""


class SingularFrame(NumericalError):
    """Surface frame degenerate (|r_u x r_v| below tolerance)."""


class QuadratureBreakdown(NumericalError):
    """A quadrature point produced a non-finite or degenerate sample."""


class SingularMatrix(NumericalError):
    """Direct solve failed; carries an estimated condition number."""

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (estimated condition {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class EigensolverFailure(NumericalError):
    """Generalized eigensolver did not converge."""


class NotPositiveDefinite(NumericalError):
    """Mass matrix failed a positive-definite factorization."""


class DegenerateGeometry(NumericalError):
    """Reconstructed geometry has invalid frames; offending data attached."""

    def __init__(self, message, mesh=None, spectrum=None):
        super().__init__(message)
        self.mesh = mesh
        self.spectrum = spectrum


class IsosurfaceOpen(NumericalError):
    """Isosurface clipped by the voxel grid boundary."""


class OptimizerStalled(MhshapeError):
    """Line search could not make progress; reported as a status."""
