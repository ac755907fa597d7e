"""Exception hierarchy shared across the package."""


class DampwaveError(Exception):
    """Base class for all package errors."""


class InvalidExtent(DampwaveError, ValueError):
    pass


class UnsupportedBoundary(DampwaveError, ValueError):
    pass


class MeshMismatch(DampwaveError, ValueError):
    pass


class ConfigError(DampwaveError, ValueError):
    """Malformed or inconsistent run configuration."""


class NewtonError(DampwaveError, RuntimeError):
    """A Newton iteration failed to converge."""


class SingularJacobian(DampwaveError, RuntimeError):
    pass


class DegenerateSamples(DampwaveError, ValueError):
    """Regression input has no spread (e.g. all energies equal)."""


class NumericalFailure(DampwaveError, RuntimeError):
    """Non-finite values that are not attributable to blow-up."""
