"""Exception hierarchy shared by all toa_lab modules."""

from __future__ import annotations


class ToaLabError(Exception):
    """Base class for every error raised by toa_lab."""


class ConfigError(ToaLabError, ValueError):
    """Invalid user-supplied configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericError(ToaLabError):
    """Base class for numerical failures."""


class NonConvergence(NumericError):
    """Adaptive quadrature ran out of subdivisions before meeting its tolerance."""

    def __init__(self, estimate, error: float, message: str = "subdivision budget exhausted"):
        self.estimate = estimate
        self.error = error
        super().__init__(f"{message} (estimate={estimate!r}, error={error:.3e})")


class NonFinite(NumericError):
    """An integrand returned NaN or infinity."""


class GridTooCoarse(NumericError):
    """A sampling grid cannot resolve the structure of the sampled function."""


class KernelSingular(NumericError):
    """A Cohen kernel vanishes where the computation needs to divide by it."""


class EnergyCutoffTooLow(NumericError):
    """The energy cutoff leaves too much of the state's probability above it."""


class UnsupportedUnits(ToaLabError, ValueError):
    """Closed-form expressions are only valid in atomic units (hbar = m = 1)."""
