"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: parse problems exit with 2, validation
problems with 3 and numerical convergence problems with 4.
"""


class MagnographError(Exception):
    """Base class for every error raised by the package."""


class ParseError(MagnographError):
    """Malformed input text (graph files, expressions, snapshots, configs)."""


class ValidationError(MagnographError):
    """Well-formed input that violates a modelling assumption."""


class UnknownVertex(ValidationError):
    pass


class PotentialDomainError(ValidationError):
    """Potential V takes values below 1 somewhere on the grid."""


class DomainError(ValidationError):
    """Argument outside the domain of a scalar function (e.g. s >= 1 in f_r)."""


class RegimeError(ValidationError):
    """Threshold requested outside the parameter regime where it is defined."""


class LeftAdmissibleSet(ValidationError):
    """A field with mass >= mu was handed to the penalized functional."""


class ConvergenceError(MagnographError):
    """An iterative solver failed to reach its tolerance."""


class DivergenceError(ConvergenceError):
    """Energy decreased without bound (supercritical collapse)."""
