"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-supplied configuration value.

    The offending field name is kept on ``field`` so the CLI can report it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalError(ArithmeticError):
    """A numerical routine failed or produced an inadmissible result."""


class IdentityViolation(NumericalError):
    """Two evaluations of the same algebraic identity disagree."""


class CoefficientError(NumericalError):
    """A coefficient function returned a non-finite value."""


class BasisMismatch(ValueError):
    """States or operators built on different spectral bases were combined."""


class PicardError(NumericalError):
    """Picard iteration did not reach the requested tolerance.

    Attributes
    ----------
    residual : float
        Last weighted sup-norm increment.
    factor : float
        Theoretical contraction factor ``(sqrt(T) L_f + L_g) / (2 lambda)``.
    iterations : int
    """

    def __init__(self, residual, factor, iterations):
        super().__init__(
            f"Picard iteration did not converge after {iterations} iterations "
            f"(last residual {residual:.3e}, theoretical contraction factor "
            f"{factor:.4f})"
        )
        self.residual = residual
        self.factor = factor
        self.iterations = iterations


class FitRefused(ValueError):
    """Log-linear decay fit cannot be performed on the given curve."""
