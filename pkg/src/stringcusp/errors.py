"""Exception types shared across the package.

Each failure class maps onto one CLI exit code (see ``cli.EXIT_CODES``).
"""

from __future__ import annotations


class StringCuspError(Exception):
    """Base class for all package errors."""


class DegenerateCurve(StringCuspError):
    """The tangent vanishes on a set of positive measure (ill-posed curve)."""


class InvalidCoupling(StringCuspError, ValueError):
    """Coupling constant with the wrong sign (a bound state needs eps_a < 0)."""


class NoBoundState(StringCuspError, ValueError):
    """kappa^2(p3) <= 0: no transverse bound state on this p3 fiber."""


class QuadratureFailure(StringCuspError):
    """An adaptive rule could not reach tolerance within its panel budget."""

    def __init__(self, message: str, where: dict | None = None):
        super().__init__(message)
        self.where = dict(where or {})


class BudgetExceeded(StringCuspError):
    """A requested node or evaluation count is above the configured budget."""


class DegenerateFit(StringCuspError):
    """Power-law fit is undefined (constant abscissa or zero magnitudes)."""


class ConeEmpty(StringCuspError):
    """Even near-axis momentum directions hit a critical point."""


class ConfigError(StringCuspError):
    """Base for configuration problems."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ConfigError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DivergenceWarning(UserWarning):
    """Successive Picard iterates stopped contracting."""
