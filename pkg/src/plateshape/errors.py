"""Exception hierarchy shared by all plateshape modules."""


class PlateshapeError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(PlateshapeError, ValueError):
    pass


class DegenerateMapError(PlateshapeError):
    """A map flips a triangle or has a singular Jacobian."""


class EmptySpaceError(PlateshapeError):
    """The constrained finite element space has no degrees of freedom."""


class NumericalError(PlateshapeError):
    """Factorization, eigensolver or root-finding failure."""


class NotSimpleError(PlateshapeError):
    """The requested eigenvalue belongs to a cluster of size > 1."""


class InvalidClusterError(PlateshapeError):
    pass


class BranchAmbiguityError(PlateshapeError):
    """Cluster membership changes between finite-difference branches."""


class UndefinedRatioError(PlateshapeError):
    pass


class IncompatibleAtlasError(PlateshapeError):
    pass


class OutOfRangeError(PlateshapeError):
    pass


class InvalidDomainError(PlateshapeError):
    pass


NUMERICAL_ERRORS = (
    DegenerateMapError,
    EmptySpaceError,
    NumericalError,
    NotSimpleError,
    InvalidClusterError,
    BranchAmbiguityError,
    UndefinedRatioError,
    OutOfRangeError,
)
