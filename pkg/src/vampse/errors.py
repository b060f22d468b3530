"""Typed errors shared across the package."""


class VampseError(Exception):
    """Base class for all package errors."""


class InvalidAspectError(VampseError):
    """Matrix aspect ratio violates an ensemble's requirement (e.g. M > N)."""


class InvalidMeasureError(VampseError):
    """Spectral measure is inconsistent (mass != 1, negative eigenvalue, ...)."""


class InvalidParameterError(VampseError):
    """A model or ensemble parameter is outside its valid range."""


class SpectralEvaluationError(VampseError):
    """Integrand not finite on the support of a spectral measure."""

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class QuadratureAccuracyError(VampseError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class InvalidPrecisionError(VampseError):
    """A denoiser received a precision Q-hat outside its valid domain."""


class DegeneratePosteriorError(VampseError):
    """Tilted-measure normalizer underflowed; posterior is numerically empty."""


class DegenerateDivergenceError(VampseError):
    """A divergence (chi) fell below the floor; message pass would divide by ~0."""


class NegativeConjugateVarianceError(VampseError):
    """A chihat update went negative beyond quadrature error; sqrt would fail."""


class IndefinitePrecisionError(VampseError):
    """LMMSE matrix K = Q2x I + Q2z A^T A is not positive definite."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class SingularMeasureError(VampseError):
    """Spectral measure degenerate for the stability Hessian (zeta0*zeta2 == zeta1^2)."""


class BracketError(VampseError):
    """Root bracket endpoints do not straddle a sign change."""


class SENonConvergenceError(VampseError):
    """State-evolution fixed point search failed where convergence was required."""

    def __init__(self, message, delta=None, residual=None):
        super().__init__(message)
        self.delta = delta
        self.residual = residual


class ConfigError(VampseError):
    """Experiment configuration failed schema or semantic validation."""
