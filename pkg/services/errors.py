# services/errors.py
"""
Exception hierarchy for layerpot.
Numerical flags (divergent tails, p.v. disagreement) are NOT exceptions;
they travel in result objects and get logged.
"""


class LayerPotError(Exception):
    """Base class for all layerpot errors"""


class ConfigurationError(LayerPotError):
    """Bad catalog id, out-of-range parameter, unsupported dimension"""


class DomainError(LayerPotError, ValueError):
    """Argument outside the mathematical domain (r <= 0, x == y, radius off the grid)"""


class DegenerateConfigurationError(DomainError):
    """1 + a(x, y) too close to zero for the closed-form kernel gradient"""


class MembershipError(LayerPotError):
    """Right-hand side fails the Y-space membership check"""


class InfeasibleConstantsError(LayerPotError):
    """No admissible (c1, c2, c3) satisfies the constant inequality"""


class AdmissibilityError(LayerPotError):
    """Global Lipschitz constant exceeds the admissible threshold"""


class ConvergenceError(LayerPotError):
    """Monotone iteration failed to converge or lost monotonicity"""


class MissingArtifactError(LayerPotError):
    """Requested report on a run directory without artifacts"""
