"""Exception hierarchy shared by all modules."""


class CurvkitError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1


class ConfigError(CurvkitError, ValueError):
    """Malformed configuration or command-line input."""

    exit_code = 2


class AdmissibilityError(CurvkitError, ValueError):
    """Kernel fails the integrability or monotonicity requirements."""

    exit_code = 3


class DomainError(CurvkitError, ValueError):
    """Argument outside the domain of an operation (e.g. the zero vector)."""

    exit_code = 3


class LocalizationError(CurvkitError):
    """A local graph patch could not be built around a boundary point."""

    exit_code = 3


class DegenerateNormalError(CurvkitError):
    """The level-set gradient vanishes at the requested point."""

    exit_code = 3


class DeformationError(CurvkitError):
    """A deformation step is too large to be a diffeomorphism."""

    exit_code = 3
