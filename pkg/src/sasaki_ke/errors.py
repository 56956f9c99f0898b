"""Exception hierarchy shared by the package."""

from __future__ import annotations


class SasakiError(Exception):
    """Base class for all package errors."""


class ConfigError(SasakiError):
    """Malformed or out-of-range configuration (CLI exit status 2)."""


class ModelError(SasakiError):
    """A background model or basic function violates a structural requirement."""


class PositivityError(ModelError):
    """A transverse form fails to be positive.

    Attributes
    ----------
    min_value : float
        Most negative density (or Monge-Ampere ratio) found.
    node : tuple of float
        ``(theta, phi)`` of the offending quadrature node.
    """

    def __init__(self, message: str, min_value: float, node: tuple[float, float]):
        super().__init__(f"{message} (min {min_value:.6g} at theta={node[0]:.4f}, phi={node[1]:.4f})")
        self.min_value = float(min_value)
        self.node = node


class NonPositiveStateError(ModelError):
    """An operation needs an admissible state but the Monge-Ampere ratio is not positive."""


class SingularOperatorError(SasakiError):
    """The linearized operator is numerically singular and no projection was requested."""

    def __init__(self, message: str, smallest_singular_value: float):
        super().__init__(f"{message} (smallest singular value {smallest_singular_value:.3e})")
        self.smallest_singular_value = float(smallest_singular_value)


class NewtonDivergenceError(SasakiError):
    """Newton iteration failed to converge."""

    def __init__(self, message: str, t: float, residual: float):
        super().__init__(f"{message} (t={t:.6g}, residual={residual:.3e})")
        self.t = float(t)
        self.residual = float(residual)


class InadmissiblePathError(SasakiError):
    """An intermediate potential on a functional path is not admissible."""


class ConvergenceError(SasakiError):
    """A refinement loop (quadrature doubling, eigensolver) did not converge."""


class AmbiguousSpectrumError(SasakiError):
    """Eigenvalues cluster near the threshold so that the kernel dimension is not well defined."""
