"""Exception types shared across the package."""


class SpdeLabError(Exception):
    """Base class for all package-specific errors."""


class PreconditionError(SpdeLabError, ValueError):
    """An operation was called with inputs violating its stated contract."""


class WeightOverflowError(SpdeLabError, OverflowError):
    """exp(s*phi) would overflow; callers must shrink s or lambda."""

    def __init__(self, s: float, lam: float, t: float, exponent: float):
        self.s = s
        self.lam = lam
        self.t = t
        self.exponent = exponent
        super().__init__(
            f"weight exponent s*phi = {exponent:.6g} exceeds the overflow budget "
            f"at (s={s:.6g}, lambda={lam:.6g}, t={t:.6g}); shrink s"
        )


class LinearSolveError(SpdeLabError, RuntimeError):
    """A time-step linear solve left a residual above the trust threshold."""


class StabilityError(SpdeLabError, ValueError):
    """Explicit-term stability budget exceeded for the chosen time step."""


class EllipticityError(SpdeLabError, ValueError):
    """Coefficient matrix fails the uniform ellipticity bound on the grid."""


class DegenerateBasisError(SpdeLabError, ValueError):
    """A source basis is linearly dependent in the source inner product."""


class ConfigError(SpdeLabError, ValueError):
    """Config file parse or validation failure, annotated with a position."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
