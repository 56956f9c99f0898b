"""
Quotient geometry of the regular Sasakian Hopf model ``S^3 -> CP^1``.

Every transverse object of the Hopf fibration descends to the quotient
2-sphere.  The canonical transverse Kahler metric is the round metric of
radius 1/2 (``g_0 = g_S / 4``, area ``pi``), whose Ricci form is
``(2m + 2) d eta_0 = 4 d eta_0``.  A Reeb orbit has length ``ell = 2 pi``,
so the Sasakian volume is ``V = ell * pi = 2 pi^2``.

Transverse Kahler forms in the class of ``d eta_0`` are stored as conformal
densities against ``g_0``.  For a total potential ``Psi`` (background
perturbation plus solution potential),

    d eta_Psi = rho_Psi * d eta_0,     rho_Psi = 1 - 2 L Psi,

where ``L`` is the positive Laplacian of the unit sphere.  With the analyst
sign convention the complex Laplacian of a metric with density ``rho`` is
``box f = 2 L f / rho`` (nonnegative spectrum, ``tr(i ddbar f) = -box f``)
and the basic de Rham Laplacian is twice that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ModelError, NonPositiveStateError, PositivityError
from .sphere import SphereGrid, sh_index

__all__ = [
    "AREA_SCALE",
    "BasicFunction",
    "EtaEinsteinConstants",
    "HDiagnostics",
    "MetricState",
    "ModelConfig",
    "TransverseModel",
    "build_model",
    "complex_laplacian",
    "compute_h",
    "de_rham_laplacian",
    "eta_einstein_map",
    "integrate",
    "load_config",
    "metric_state",
    "random_potential",
    "sasaki_ricci_bound",
    "transverse_scalar_curvature",
    "volume",
    "volume_invariance",
    "VolumeInvarianceResult",
]

#: ratio between the canonical transverse area form and the unit-sphere area form
AREA_SCALE = 0.25

_CONFIG_KEYS = {"band_limit", "fiber_length", "symmetry_mode", "perturbation", "seed"}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """
    Parameters of the Hopf model.

    Attributes
    ----------
    band_limit : int
        Maximum spherical-harmonic degree N (at least 8).
    fiber_length : float
        Length of a generic Reeb orbit.
    symmetry_mode : {"full", "even"}
        ``"even"`` restricts basic functions to antipodally even harmonics.
    perturbation : tuple of (degree, order, amplitude)
        Background potential ``psi`` as a sparse list of real harmonics.
    seed : int
        Seed recorded with every derived output.
    """

    band_limit: int = 32
    fiber_length: float = 2.0 * np.pi
    symmetry_mode: str = "full"
    perturbation: tuple[tuple[int, int, float], ...] = ()
    seed: int = 0

    @classmethod
    def from_mapping(cls, data: dict) -> "ModelConfig":
        """Validate a parsed mapping; unknown keys are rejected."""
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("model configuration must be a mapping")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        try:
            if "band_limit" in data:
                kwargs["band_limit"] = int(data["band_limit"])
            if "fiber_length" in data:
                kwargs["fiber_length"] = float(data["fiber_length"])
            if "symmetry_mode" in data:
                kwargs["symmetry_mode"] = str(data["symmetry_mode"])
            if "seed" in data:
                kwargs["seed"] = int(data["seed"])
            if data.get("perturbation"):
                triples = []
                for entry in data["perturbation"]:
                    if len(entry) != 3:
                        raise ConfigError(f"perturbation entries are [degree, order, amplitude], got {entry!r}")
                    triples.append((int(entry[0]), int(entry[1]), float(entry[2])))
                kwargs["perturbation"] = tuple(triples)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model configuration: {exc}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.band_limit < 8:
            raise ConfigError(f"band_limit must be at least 8, got {self.band_limit}")
        if not self.fiber_length > 0:
            raise ConfigError(f"fiber_length must be positive, got {self.fiber_length}")
        if self.symmetry_mode not in ("full", "even"):
            raise ConfigError(f"symmetry_mode must be 'full' or 'even', got {self.symmetry_mode!r}")
        for l, m, _ in self.perturbation:
            if l < 0 or abs(m) > l or l > self.band_limit:
                raise ConfigError(f"perturbation harmonic (l={l}, m={m}) outside the band")

    def to_dict(self) -> dict:
        return {
            "band_limit": self.band_limit,
            "fiber_length": self.fiber_length,
            "symmetry_mode": self.symmetry_mode,
            "perturbation": [list(p) for p in self.perturbation],
            "seed": self.seed,
        }


def load_config(path: str | Path) -> ModelConfig:
    """Read a YAML model configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration {path} is not valid YAML: {exc}") from exc
    return ModelConfig.from_mapping(data)


# ---------------------------------------------------------------------------
# basic functions
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BasicFunction:
    """
    A scalar field on the quotient sphere (a function on S constant along the Reeb orbits).

    Either grid values or spectral coefficients may be the primary data.
    Band-limited fields built from coefficients keep their exact
    coefficients; nonlinear fields (logarithms, quotients) are stored as
    grid values and their coefficients are the quadrature projection.
    """

    values: np.ndarray
    band_limit: int
    even_only: bool
    grid: SphereGrid = field(repr=False)
    _coeffs: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_coeffs(cls, grid: SphereGrid, coeffs: np.ndarray, even_only: bool = False) -> "BasicFunction":
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != (grid.size,):
            raise ModelError(f"expected {grid.size} coefficients, got shape {coeffs.shape}")
        if even_only:
            odd = np.abs(coeffs[grid.degrees % 2 == 1])
            if odd.size and odd.max() > 1e-12:
                raise ModelError(f"odd-degree coefficient {odd.max():.3e} in an even-only function")
            coeffs[grid.degrees % 2 == 1] = 0.0
        return cls(grid.synthesis(coeffs), grid.band_limit, even_only, grid, coeffs)

    @classmethod
    def from_values(cls, grid: SphereGrid, values: np.ndarray, even_only: bool = False) -> "BasicFunction":
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise ModelError(f"expected grid shape {grid.shape}, got {values.shape}")
        return cls(values, grid.band_limit, even_only, grid)

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            c = self.grid.analysis(self.values)
            if self.even_only:
                c[self.grid.degrees % 2 == 1] = 0.0
            self._coeffs = c
        return self._coeffs

    def roundtrip_error(self) -> float:
        """Relative max-norm change under projection followed by synthesis."""
        back = self.grid.synthesis(self.coeffs)
        scale = max(np.abs(self.values).max(), 1e-300)
        return float(np.abs(back - self.values).max() / scale)

    def odd_coefficient_norm(self) -> float:
        c = self.grid.analysis(self.values)
        odd = c[self.grid.degrees % 2 == 1]
        return float(np.abs(odd).max()) if odd.size else 0.0

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def oscillation(self) -> float:
        return float(self.values.max() - self.values.min())

    def evaluate(self, theta, phi) -> np.ndarray:
        """Point evaluation through the spectral representation."""
        return self.grid.evaluate(self.coeffs, theta, phi)

    def _combine(self, other, op) -> "BasicFunction":
        even = self.even_only
        if isinstance(other, BasicFunction):
            even = self.even_only and other.even_only
            vals = op(self.values, other.values)
            coeffs = None
            if self._coeffs is not None and other._coeffs is not None and op in (np.add, np.subtract):
                coeffs = op(self._coeffs, other._coeffs)
            return BasicFunction(vals, self.band_limit, even, self.grid, coeffs)
        other = float(other)
        vals = op(self.values, other)
        coeffs = None
        if self._coeffs is not None:
            if op is np.multiply:
                coeffs = self._coeffs * other
            elif op in (np.add, np.subtract):
                coeffs = self._coeffs.copy()
                coeffs[0] = op(coeffs[0], other * np.sqrt(4.0 * np.pi))
        return BasicFunction(vals, self.band_limit, even, self.grid, coeffs)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, BasicFunction):
            return self._combine(other, np.divide)
        return self * (1.0 / float(other))


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class TransverseModel:
    """
    Immutable background of the regular Hopf model.

    Parameters
    ----------
    grid : SphereGrid
        Quadrature grid and spectral basis of the quotient.
    psi_coeffs : ndarray
        Spectral coefficients of the background potential ``psi``.
    fiber_length : float
        Reeb orbit length ``ell``.
    symmetry_mode : {"full", "even"}
    m : int
        Transverse complex dimension (only 1 is implemented).
    config : ModelConfig, optional
        The configuration the model was built from, kept for provenance.
    """

    def __init__(
        self,
        grid: SphereGrid,
        psi_coeffs: np.ndarray,
        fiber_length: float = 2.0 * np.pi,
        symmetry_mode: str = "full",
        m: int = 1,
        config: ModelConfig | None = None,
    ):
        if m != 1:
            raise ModelError("only the m = 1 Monge-Ampere determinant is implemented")
        self.m = int(m)
        self.grid = grid
        self.quotient_grid = grid
        self.spectral_basis = grid
        self.band_limit = grid.band_limit
        self.fiber_length = float(fiber_length)
        self.symmetry_mode = symmetry_mode
        self.even_only = symmetry_mode == "even"
        self.config = config
        psi_coeffs = np.array(psi_coeffs, dtype=float)
        psi_coeffs.setflags(write=False)
        self.psi_coeffs = psi_coeffs
        self.active_mask = grid.degree_mask(self.even_only)
        self.area_weights = grid.weights * AREA_SCALE
        self.area_weights.setflags(write=False)
        rho = grid.synthesis(density_coeffs(grid, psi_coeffs))
        rho.setflags(write=False)
        self.background_density = rho
        self.background_form = rho
        self.quadrature_error = quadrature_exactness_error(grid)

    @property
    def einstein_constant(self) -> float:
        """``2m + 2``: the transverse Einstein constant of the canonical metric."""
        return 2.0 * self.m + 2.0

    @property
    def is_canonical(self) -> bool:
        return not np.any(self.psi_coeffs)

    @cached_property
    def volume(self) -> float:
        """``V = ell * int (d eta)^m`` over the quotient."""
        return float(self.fiber_length * np.sum(self.area_weights * self.background_density))

    @property
    def psi(self) -> BasicFunction:
        return self.function_from_coeffs(self.psi_coeffs)

    @cached_property
    def h(self) -> BasicFunction:
        return compute_h(self)

    # convenience constructors -------------------------------------------

    def function_from_coeffs(self, coeffs: np.ndarray) -> BasicFunction:
        return BasicFunction.from_coeffs(self.grid, coeffs, self.even_only)

    def function_from_values(self, values: np.ndarray) -> BasicFunction:
        return BasicFunction.from_values(self.grid, values, self.even_only)

    def harmonic(self, degree: int, order: int = 0, amplitude: float = 1.0) -> BasicFunction:
        c = np.zeros(self.grid.size)
        c[sh_index(degree, order)] = amplitude
        return self.function_from_coeffs(c)

    def constant(self, value: float) -> BasicFunction:
        c = np.zeros(self.grid.size)
        c[0] = value * np.sqrt(4.0 * np.pi)
        return self.function_from_coeffs(c)

    def zero(self) -> BasicFunction:
        return self.function_from_coeffs(np.zeros(self.grid.size))

    def __repr__(self) -> str:
        return (
            f"TransverseModel(N={self.band_limit}, m={self.m}, fiber_length={self.fiber_length:.6g}, "
            f"symmetry_mode={self.symmetry_mode!r}, canonical={self.is_canonical})"
        )


def density_coeffs(grid: SphereGrid, potential_coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of ``1 - 2 L Psi`` (leading axes batched)."""
    out = -2.0 * grid.eigenvalues * np.asarray(potential_coeffs, dtype=float)
    out[..., 0] += np.sqrt(4.0 * np.pi)
    return out


def quadrature_exactness_error(grid: SphereGrid) -> float:
    """
    Largest relative error of the grid on monomials up to degree 2N.

    Checks ``sum w mu^k`` against ``2/(k+1)`` (zero for odd k) and the
    discrete orthogonality of ``cos(k phi)``, ``sin(k phi)`` for ``k <= 2N``.
    """
    N = grid.band_limit
    k = np.arange(2 * N + 1)
    exact = np.where(k % 2 == 0, 2.0 / (k + 1.0), 0.0)
    got = (grid.lat_weights[None, :] * grid.mu[None, :] ** k[:, None]).sum(axis=1)
    lat_err = np.abs(got - exact).max() / 2.0
    dphi = 2.0 * np.pi / grid.nlon
    kk = np.arange(1, 2 * N + 1)[:, None]
    lon_err = max(
        np.abs(np.cos(kk * grid.phi).sum(axis=1) * dphi).max(),
        np.abs(np.sin(kk * grid.phi).sum(axis=1) * dphi).max(),
    ) / (2.0 * np.pi)
    return float(max(lat_err, lon_err))


def build_model(config: ModelConfig | dict | None = None, **overrides) -> TransverseModel:
    """
    Instantiate the regular Hopf model.

    Parameters
    ----------
    config : ModelConfig or mapping, optional
        Model configuration; keyword overrides are merged on top.

    Returns
    -------
    TransverseModel

    Raises
    ------
    ConfigError
        Invalid parameters (band limit below 8, nonpositive fiber length).
    ModelError
        An odd-degree perturbation in even symmetry mode.
    PositivityError
        The perturbed background density is not positive at some node.
    """
    if config is None:
        config = ModelConfig()
    elif isinstance(config, dict):
        config = ModelConfig.from_mapping(config)
    if overrides:
        data = config.to_dict()
        data.update(overrides)
        config = ModelConfig.from_mapping(data)
    config.validate()

    grid = SphereGrid(config.band_limit)
    psi = np.zeros(grid.size)
    for l, m, amp in config.perturbation:
        if config.symmetry_mode == "even" and l % 2 == 1 and amp != 0.0:
            raise ModelError(f"odd perturbation Y_{l},{m} is not allowed in even symmetry mode")
        psi[sh_index(l, m)] += amp

    rho = grid.synthesis(density_coeffs(grid, psi))
    if rho.min() <= 0.0:
        j, k = np.unravel_index(np.argmin(rho), rho.shape)
        raise PositivityError(
            "background perturbation destroys positivity of d eta",
            rho.min(),
            (float(grid.theta[j]), float(grid.phi[k])),
        )
    model = TransverseModel(grid, psi, config.fiber_length, config.symmetry_mode, 1, config)
    if model.quadrature_error > 1e-12:
        raise ModelError(f"quadrature exactness check failed ({model.quadrature_error:.3e})")
    return model


# ---------------------------------------------------------------------------
# metric states
# ---------------------------------------------------------------------------


class MetricState:
    """
    A potential ``u`` together with the cached geometry of ``d eta_u``.

    Attributes
    ----------
    model : TransverseModel
    u : BasicFunction
    potential_coeffs : ndarray
        Coefficients of the total potential ``psi + u``.
    density : ndarray
        ``rho_u = 1 - 2 L (psi + u)``, density of ``d eta_u`` against ``d eta_0``.
    ma_ratio : ndarray
        Monge-Ampere ratio ``(d eta_u)^m / (d eta)^m = rho_u / rho``.
    positive : bool
        Whether the ratio is positive at every node.
    measure : ndarray
        Node weights of ``(d eta_u)^m wedge eta`` (fiber factor included).
    """

    def __init__(self, model: TransverseModel, u: BasicFunction):
        if u.band_limit != model.band_limit:
            raise ModelError(f"potential band limit {u.band_limit} does not match the model ({model.band_limit})")
        if model.even_only and not u.even_only:
            if u.odd_coefficient_norm() > 1e-12:
                raise ModelError("odd potential supplied to an even-symmetry model")
            u = model.function_from_coeffs(np.where(model.active_mask, u.coeffs, 0.0))
        self.model = model
        self.u = u
        grid = model.grid
        self.potential_coeffs = model.psi_coeffs + u.coeffs
        self.density_coeffs = density_coeffs(grid, self.potential_coeffs)
        self.density = grid.synthesis(self.density_coeffs)
        self.ma_ratio = self.density / model.background_density
        self.min_ratio = float(self.ma_ratio.min())
        self.positive = self.min_ratio > 0.0
        self.measure = model.fiber_length * model.area_weights * self.density

    def require_positive(self) -> None:
        if not self.positive:
            raise NonPositiveStateError(
                f"Monge-Ampere ratio is not positive (min {self.min_ratio:.6g})"
            )

    @cached_property
    def density_gradient(self) -> tuple[np.ndarray, np.ndarray]:
        return self.model.grid.gradient(self.density_coeffs)

    @cached_property
    def log_density_laplacian(self) -> np.ndarray:
        """``L log rho_u`` on the grid via ``L rho / rho + |grad rho|^2 / rho^2``."""
        g = self.model.grid
        rho = self.density
        lrho = g.synthesis(g.laplacian(self.density_coeffs))
        gt, gp = self.density_gradient
        return lrho / rho + (gt * gt + gp * gp) / rho**2

    @cached_property
    def scalar_curvature(self) -> np.ndarray:
        self.require_positive()
        # Gaussian curvature of (rho/4) g_S; for m = 1 this is s^T (canonical value 4)
        return (4.0 + 2.0 * self.log_density_laplacian) / self.density

    @cached_property
    def ricci_potential(self) -> BasicFunction:
        """
        Ricci potential ``h_u`` of ``d eta_u`` normalised by ``int (e^h - 1) d mu_u = 0``.

        ``Ric^T(d eta_u) - (2m+2) d eta_u = i ddbar h_u`` with the closed form
        ``h_u = -(2m+2) Psi - log rho_u + c``.
        """
        self.require_positive()
        g = self.model.grid
        raw = -self.model.einstein_constant * g.synthesis(self.potential_coeffs) - np.log(self.density)
        raw = raw + np.log(self.model.volume / np.sum(np.exp(raw) * self.measure))
        return self.model.function_from_values(raw)

    @property
    def volume(self) -> float:
        return float(self.measure.sum())

    def __repr__(self) -> str:
        return f"MetricState(N={self.model.band_limit}, positive={self.positive}, min_ratio={self.min_ratio:.4g})"


def metric_state(model: TransverseModel, u: BasicFunction | np.ndarray | None = None) -> MetricState:
    """
    Geometry of ``d eta_u = d eta + i ddbar u``.

    ``u`` may be a BasicFunction, a coefficient vector or ``None`` (zero).
    Non-positive states are returned with ``positive = False``.
    """
    if u is None:
        u = model.zero()
    elif not isinstance(u, BasicFunction):
        u = model.function_from_coeffs(np.asarray(u, dtype=float))
    return MetricState(model, u)


def _as_function(model: TransverseModel, f) -> BasicFunction:
    if isinstance(f, BasicFunction):
        return f
    f = np.asarray(f, dtype=float)
    if f.shape == (model.grid.size,):
        return model.function_from_coeffs(f)
    return model.function_from_values(np.broadcast_to(f, model.grid.shape))


def complex_laplacian(state: MetricState, f: BasicFunction) -> BasicFunction:
    """
    Complex Laplacian ``box_u f = -tr_{d eta_u}(i ddbar f)`` (nonnegative spectrum).

    On the quotient ``box_u f = 2 L f / rho_u``.
    """
    state.require_positive()
    f = _as_function(state.model, f)
    g = state.model.grid
    lf = g.synthesis(g.laplacian(f.coeffs))
    return state.model.function_from_values(2.0 * lf / state.density)


def de_rham_laplacian(state: MetricState, f: BasicFunction) -> BasicFunction:
    """
    Basic de Rham Laplacian of the transverse metric, from its coordinate formula.

    The transverse metric is ``(rho_u / 4)(d theta^2 + sin^2 theta d phi^2)``,
    so ``Delta f = (4 / rho_u) * (-(f_tt + cot f_t + f_pp / sin^2))`` with
    the derivatives taken from the ladder relations.
    """
    state.require_positive()
    f = _as_function(state.model, f)
    lf = state.model.grid.coordinate_laplacian(f.coeffs)
    return state.model.function_from_values(lf / (AREA_SCALE * state.density))


def transverse_scalar_curvature(state: MetricState) -> BasicFunction:
    """Transverse scalar curvature ``s^T`` of ``d eta_u`` (canonical value ``m(2m+2) = 4``)."""
    return state.model.function_from_values(state.scalar_curvature)


def integrate(state: MetricState, f=1.0) -> float:
    """``int_S f (d eta_u)^m wedge eta = ell * int_quotient f (d eta_u)^m``."""
    if isinstance(f, BasicFunction):
        vals = f.values
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape == (state.model.grid.size,):
            vals = state.model.grid.synthesis(vals)
    return float(np.sum(vals * state.measure))


def volume(state: MetricState) -> float:
    return integrate(state, 1.0)


# ---------------------------------------------------------------------------
# Ricci potential of the background
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HDiagnostics:
    """Consistency residuals of :func:`compute_h`."""

    poisson_gap: float
    ddbar_residual: float
    normalization_residual: float
    class_residual: float


def compute_h(model: TransverseModel, diagnostics: bool = False, class_tol: float = 1e-6):
    """
    Ricci potential ``h`` of the background, normalised by ``int (e^h - 1) dmu = 0``.

    Computed twice: from the closed form ``h = -(2m+2) psi - log rho + c`` and
    by solving the Poisson equation ``2 L h = rho ((2m+2) - s^T)``.

    Parameters
    ----------
    model : TransverseModel
    diagnostics : bool
        Also return an :class:`HDiagnostics` record.
    class_tol : float
        Tolerance on the relative mean of ``s^T - m(2m+2)`` (basic class condition).

    Returns
    -------
    h : BasicFunction
        Closed-form values on the grid.
    diag : HDiagnostics, optional
    """
    cached = model.__dict__.get("_h_result")
    if cached is None:
        grid = model.grid
        state = metric_state(model)
        ec = model.einstein_constant
        s = state.scalar_curvature
        V = model.volume
        class_residual = float(np.sum((s - model.m * ec) * state.measure) / (model.m * ec * V))
        if abs(class_residual) > class_tol:
            raise ModelError(f"basic class condition violated: relative mean of s^T - m(2m+2) is {class_residual:.3e}")

        def normalise(vals):
            return vals + np.log(V / np.sum(np.exp(vals) * state.measure))

        rho = model.background_density
        closed = normalise(-ec * grid.synthesis(model.psi_coeffs) - np.log(rho))
        rhs = grid.analysis(rho * (ec - s))
        hc = np.zeros_like(rhs)
        nz = grid.eigenvalues > 0
        hc[nz] = rhs[nz] / (2.0 * grid.eigenvalues[nz])
        poisson = normalise(grid.synthesis(hc))

        # i ddbar h = -(2 L h) d eta_0 against Ric^T - (2m+2) d eta = (s rho - (2m+2) rho) d eta_0
        lhs = -2.0 * grid.synthesis(grid.laplacian(grid.analysis(closed)))
        ddbar = float(np.abs(lhs - (s - ec) * rho).max())
        norm = float(abs(np.sum((np.exp(closed) - 1.0) * state.measure)) / V)
        diag = HDiagnostics(float(np.abs(closed - poisson).max()), ddbar, norm, class_residual)
        h = model.function_from_values(closed)
        model.__dict__["_h_result"] = (h, diag)
        cached = (h, diag)
    return cached if diagnostics else cached[0]


# ---------------------------------------------------------------------------
# eta-Einstein bookkeeping and the Sasaki Ricci bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EtaEinsteinConstants:
    """Constants of ``Ric = lambda g + nu eta (x) eta`` for ``Ric^T = tau g^T``."""

    tau: float
    lambda_: float
    nu: float
    m: int

    @property
    def is_sasaki_einstein(self) -> bool:
        return self.nu == 0.0


def eta_einstein_map(tau: float, m: int) -> EtaEinsteinConstants:
    """``lambda = tau - 2`` and ``nu = 2m + 2 - tau``."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    tau = float(tau)
    return EtaEinsteinConstants(tau=tau, lambda_=tau - 2.0, nu=2.0 * m + 2.0 - tau, m=int(m))


def sasaki_ricci_bound(state: MetricState, t: float) -> float:
    """
    Lower bound for the Ricci tensor of the rescaled metric ``g_{u,mu}``, ``mu = 1/t``.

    Scaling the contact form by ``t`` multiplies the transverse metric by
    ``t`` and leaves the transverse Ricci form unchanged.  On horizontal
    vectors ``Ric = Ric^T - 2 g^T`` and on the Reeb field ``Ric = 2m``, so
    the bound is ``min(min s^T / (m t) - 2, 2m)`` for m = 1 where ``Ric^T =
    s^T g^T``.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if t > 1:
        raise ValueError(f"t must not exceed 1, got {t}")
    state.require_positive()
    m = state.model.m
    ric_min = float(state.scalar_curvature.min()) / m
    return min(ric_min / t - 2.0, 2.0 * m)


# ---------------------------------------------------------------------------
# random admissible potentials
# ---------------------------------------------------------------------------


def random_potential(
    model: TransverseModel,
    rng: np.random.Generator,
    amplitude: float | None = None,
    margin: float = 0.1,
    decay: float = 1.0,
    max_degree: int | None = 6,
) -> BasicFunction:
    """
    Random admissible potential with Gaussian spectral coefficients.

    Coefficients of degree ``l <= max_degree`` have standard deviation
    ``(1 + l(l+1))^(-decay)``.  The field is scaled so that ``max |box u|``
    equals ``amplitude`` (drawn in [0.1, 0.5] when omitted) and then halved
    until the Monge-Ampere ratio is at least ``margin`` everywhere.

    The low default degree keeps ``log rho_u`` resolved by the grid, so that
    curvature integrals are accurate to roundoff at moderate band limits.
    """
    grid = model.grid
    lmax = model.band_limit if max_degree is None else min(max_degree, model.band_limit)
    std = (1.0 + grid.eigenvalues) ** (-decay)
    std[grid.degrees > lmax] = 0.0
    c = rng.standard_normal(grid.size) * std
    c[~model.active_mask] = 0.0
    c0 = c[0]
    c[0] = 0.0
    if amplitude is None:
        amplitude = rng.uniform(0.1, 0.5)
    box = 2.0 * grid.synthesis(grid.laplacian(c)) / model.background_density
    peak = np.abs(box).max()
    if peak > 0:
        c *= amplitude / peak
    for _ in range(60):
        ratio = 1.0 - 2.0 * grid.synthesis(grid.laplacian(c)) / model.background_density
        if ratio.min() >= margin:
            break
        c *= 0.5
    c[0] = c0
    return model.function_from_coeffs(c)


@dataclass(frozen=True)
class VolumeInvarianceResult:
    """Relative volume errors ``|V(u) - V| / V`` over random admissible potentials."""

    errors: tuple[float, ...]
    seed: int
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def to_dict(self) -> dict:
        return {"samples": len(self.errors), "max_error": self.max_error, "tol": self.tol, "seed": self.seed, "passed": self.passed}


def volume_invariance(
    model: TransverseModel, n_samples: int = 200, seed: int = 0, tol: float = 1e-8, max_degree: int | None = None
) -> VolumeInvarianceResult:
    """
    Volume of ``(d eta_u)^m wedge eta`` for random admissible ``u``.

    Potentials use every active degree by default, since the volume is a
    band-limited integral and needs no smoothness beyond admissibility.
    """
    rng = np.random.default_rng(seed)
    V = model.volume
    errors = []
    for _ in range(n_samples):
        u = random_potential(model, rng, max_degree=max_degree)
        errors.append(abs(volume(metric_state(model, u)) - V) / V)
    return VolumeInvarianceResult(tuple(float(e) for e in errors), int(seed), float(tol))


def perturbation_from_pairs(model: TransverseModel, pairs: Iterable[Sequence[float]]) -> np.ndarray:
    """Coefficient vector from ``(degree, order, amplitude)`` triples."""
    c = np.zeros(model.grid.size)
    for l, m, a in pairs:
        c[sh_index(int(l), int(m))] += float(a)
    return c
