"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes, so each class corresponds to one
failure family rather than one call site.
"""


class FimSelectError(Exception):
    """Base class for all library errors."""


class ConfigError(FimSelectError, ValueError):
    """Invalid scenario, prior, or sensor configuration."""


class NumericalError(FimSelectError, ArithmeticError):
    """A matrix that must be positive definite is not, or an estimate diverged."""


class GeometryError(NumericalError):
    """Sensor geometry is singular (colocated target, target behind camera)."""


class OracleGuardError(FimSelectError, RuntimeError):
    """Exhaustive search would enumerate too many subsets."""


class UsageError(FimSelectError, ValueError):
    """An API contract was violated by the caller (e.g. pushing an atom twice)."""
