"""
Energy functionals L, M, I, J on the space of admissible basic potentials.

Path functionals are integrated in the path parameter with Gauss-Legendre
quadrature whose order is doubled until two successive values agree.
All quotient integrals carry the fiber factor, so

    L(phi, phi') = (1/V) int_0^1 int_S phidot_s (d eta_{phi_s})^m wedge eta ds,
    M(phi, phi') = -(1/V) int_0^1 int_S phidot_s (s^T_s - m(2m+2)) (d eta_{phi_s})^m wedge eta ds,
    I(phi, phi') = (1/V) int_S (phi' - phi) ((d eta_phi)^m - (d eta_phi')^m) wedge eta,
    J(phi, phi') = -L(phi, phi') + (1/V) int_S (phi' - phi) (d eta_phi)^m wedge eta.

Batched transforms evaluate every quadrature node of a path at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_legendre

from .errors import ConvergenceError, InadmissiblePathError
from .model import BasicFunction, TransverseModel, density_coeffs, random_potential

__all__ = [
    "FunctionalPath",
    "FunctionalReport",
    "IdentityRecord",
    "chain_margins",
    "evaluate_functional",
    "functional_I",
    "functional_J",
    "functional_L",
    "functional_M",
    "path_integral",
    "verify_functional_identities",
]

_WARPS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]] = {
    "identity": (lambda s: s, lambda s: np.ones_like(s)),
    "quadratic": (lambda s: s * s, lambda s: 2.0 * s),
    "sine": (lambda s: 0.5 * (1.0 - np.cos(np.pi * s)), lambda s: 0.5 * np.pi * np.sin(np.pi * s)),
}


def _coeffs(f) -> np.ndarray:
    return f.coeffs if isinstance(f, BasicFunction) else np.asarray(f, dtype=float)


@dataclass
class FunctionalPath:
    """
    A smooth path of potentials from ``start`` to ``end`` over ``s`` in [0, 1].

    ``phi(s) = start + tau (end - start) + tau (1 - tau) detour`` with
    ``tau = warp(s)``.  The default (no detour, identity warp) is the linear
    segment.

    Parameters
    ----------
    start, end : BasicFunction or coefficient array
    detour : BasicFunction or coefficient array, optional
        Direction of the quadratic bulge of the path.
    warp : {"identity", "quadratic", "sine"}
        Reparametrization of the path parameter.
    order : int
        Initial Gauss-Legendre order in ``s``.
    """

    start: BasicFunction | np.ndarray
    end: BasicFunction | np.ndarray
    detour: BasicFunction | np.ndarray | None = None
    warp: str = "identity"
    order: int = 4
    _a: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)
    _w: np.ndarray | None = field(init=False, repr=False)

    def __post_init__(self):
        if self.warp not in _WARPS:
            raise ValueError(f"unknown warp {self.warp!r}; choose from {sorted(_WARPS)}")
        self._a = _coeffs(self.start)
        self._b = _coeffs(self.end)
        self._w = None if self.detour is None else _coeffs(self.detour)

    @property
    def is_linear(self) -> bool:
        return self._w is None and self.warp == "identity"

    def potential(self, s: np.ndarray) -> np.ndarray:
        """Coefficients of ``phi(s)``; shape ``(len(s), ncoeffs)``."""
        tau = _WARPS[self.warp][0](np.atleast_1d(np.asarray(s, dtype=float)))[:, None]
        out = self._a + tau * (self._b - self._a)
        if self._w is not None:
            out = out + tau * (1.0 - tau) * self._w
        return out

    def velocity(self, s: np.ndarray) -> np.ndarray:
        """Coefficients of ``d phi / ds``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        tau_fn, dtau_fn = _WARPS[self.warp]
        tau = tau_fn(s)[:, None]
        dtau = dtau_fn(s)[:, None]
        out = np.broadcast_to(self._b - self._a, (s.size, self._a.size)).copy()
        if self._w is not None:
            out = out + (1.0 - 2.0 * tau) * self._w
        return dtau * out


def _path_integrands(model: TransverseModel, path: FunctionalPath, s: np.ndarray, kinds: Sequence[str]) -> dict:
    grid = model.grid
    pot = path.potential(s)
    vel = grid.synthesis(path.velocity(s))
    rho_c = density_coeffs(grid, model.psi_coeffs + pot)
    rho = grid.synthesis(rho_c)
    if rho.min() <= 0.0:
        k = int(np.argmin(rho.reshape(len(s), -1).min(axis=1)))
        raise InadmissiblePathError(f"path leaves the admissible set near s={s[k]:.4f} (min density {rho.min():.3e})")
    w = model.fiber_length * model.area_weights
    out = {}
    if "L" in kinds:
        out["L"] = np.sum(vel * rho * w, axis=(-2, -1))
    if "J" in kinds:
        rho_start = grid.synthesis(density_coeffs(grid, model.psi_coeffs + path.potential(np.array([0.0]))[0]))
        out["J"] = np.sum(vel * (rho_start - rho) * w, axis=(-2, -1))
    if "M" in kinds:
        lrho = grid.synthesis(grid.laplacian(rho_c))
        gt, gp = grid.gradient(rho_c)
        llog = lrho / rho + (gt * gt + gp * gp) / rho**2
        ec = model.einstein_constant
        # (s^T - m(2m+2)) rho for m = 1, with rho s^T = 4 + 2 L log rho
        curv = ec + 2.0 * llog - model.m * ec * rho
        out["M"] = -np.sum(vel * curv * w, axis=(-2, -1))
    return out


def path_integral(
    model: TransverseModel,
    path: FunctionalPath,
    kind: str,
    tol: float = 1e-9,
    max_doublings: int = 8,
) -> tuple[float, int]:
    """
    Integrate a path functional with order doubling.

    Returns
    -------
    value : float
    order : int
        The Gauss-Legendre order at which successive values agreed to ``tol``.

    Raises
    ------
    InadmissiblePathError
        An intermediate state is not positive.
    ConvergenceError
        No agreement after ``max_doublings`` doublings.
    """
    if kind not in ("L", "M", "J"):
        raise ValueError(f"{kind!r} is not a path functional")
    V = model.volume
    n = max(int(path.order), 1)
    prev = None
    for _ in range(max_doublings + 1):
        x, wq = roots_legendre(n)
        s = 0.5 * (x + 1.0)
        vals = _path_integrands(model, path, s, (kind,))[kind]
        value = float(0.5 * np.dot(wq, vals) / V)
        if prev is not None and abs(value - prev) < tol:
            return value, n
        prev = value
        n *= 2
    raise ConvergenceError(f"{kind} path quadrature did not converge after {max_doublings} doublings")


def _state_density(model: TransverseModel, phi: np.ndarray) -> np.ndarray:
    rho = model.grid.synthesis(density_coeffs(model.grid, model.psi_coeffs + phi))
    if rho.min() <= 0.0:
        raise InadmissiblePathError(f"potential is not admissible (min density {rho.min():.3e})")
    return rho


def functional_I(model: TransverseModel, phi, phi2) -> float:
    a, b = _coeffs(phi), _coeffs(phi2)
    g = model.grid
    diff = g.synthesis(b - a)
    drho = _state_density(model, a) - _state_density(model, b)
    return float(np.sum(diff * drho * model.area_weights) * model.fiber_length / model.volume)


def functional_L(model: TransverseModel, phi, phi2, path: FunctionalPath | None = None, tol: float = 1e-9) -> float:
    if path is None:
        path = FunctionalPath(_coeffs(phi), _coeffs(phi2))
    return path_integral(model, path, "L", tol)[0]


def functional_M(model: TransverseModel, phi, phi2, path: FunctionalPath | None = None, tol: float = 1e-9) -> float:
    if path is None:
        path = FunctionalPath(_coeffs(phi), _coeffs(phi2))
    return path_integral(model, path, "M", tol)[0]


def functional_J(model: TransverseModel, phi, phi2, path: FunctionalPath | None = None, tol: float = 1e-9) -> float:
    """
    ``J`` via ``-L + (1/V) int (phi' - phi) (d eta_phi)^m wedge eta``.

    When an explicit ``path`` is given the defining path integral is used instead.
    """
    a, b = _coeffs(phi), _coeffs(phi2)
    if path is not None:
        return path_integral(model, path, "J", tol)[0]
    rho_a = _state_density(model, a)
    direct = np.sum(model.grid.synthesis(b - a) * rho_a * model.area_weights) * model.fiber_length / model.volume
    return float(direct - functional_L(model, a, b, tol=tol))


def evaluate_functional(
    kind: str,
    model: TransverseModel,
    phi,
    phi2,
    path: FunctionalPath | None = None,
    tol: float = 1e-9,
) -> float:
    """
    Evaluate ``L``, ``M``, ``I`` or ``J`` at the pair ``(phi, phi2)``.

    Parameters
    ----------
    kind : {"L", "M", "I", "J"}
    model : TransverseModel
    phi, phi2 : BasicFunction or coefficient arrays
    path : FunctionalPath, optional
        Path for ``L`` and ``M`` (linear segment by default).  For ``J`` a
        path selects the path-integral definition instead of the direct one.
    tol : float
        Agreement threshold for successive quadrature doublings.
    """
    kind = kind.upper()
    if kind == "L":
        return functional_L(model, phi, phi2, path, tol)
    if kind == "M":
        return functional_M(model, phi, phi2, path, tol)
    if kind == "I":
        return functional_I(model, phi, phi2)
    if kind == "J":
        return functional_J(model, phi, phi2, path, tol)
    raise ValueError(f"unknown functional {kind!r}")


def chain_margins(I: float, J: float, m: int = 1) -> tuple[float, float, float]:
    """Margins of ``0 <= I <= (m+1)(I-J) <= m I`` (all nonnegative when the chain holds)."""
    gap = (m + 1) * (I - J)
    return I, gap - I, m * I - gap


# ---------------------------------------------------------------------------
# identity suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityRecord:
    """One identity check on one sample."""

    identity: str
    sample: int
    residual: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "sample": self.sample,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


@dataclass
class FunctionalReport:
    """
    Values and identity residuals from :func:`verify_functional_identities`.

    ``values`` holds one dict of ``L, M, I, J`` per sample pair;
    ``records`` one entry per identity per sample; ``chain_binding`` counts
    samples where each side of the inequality chain is attained (within
    ``1e-9`` relative to ``I``).
    """

    values: list[dict] = field(default_factory=list)
    records: list[IdentityRecord] = field(default_factory=list)
    chain_binding: dict = field(default_factory=dict)
    seed: int | None = None

    def add(self, identity: str, sample: int, residual: float, tolerance: float, lower_bound: bool = False):
        residual = float(residual)
        passed = residual >= -tolerance if lower_bound else abs(residual) < tolerance
        self.records.append(IdentityRecord(identity, sample, residual, tolerance, bool(passed and np.isfinite(residual))))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def worst(self) -> dict:
        """Largest absolute residual (or most negative margin) per identity."""
        out: dict[str, dict] = {}
        for r in self.records:
            cur = out.setdefault(r.identity, {"worst": 0.0, "tolerance": r.tolerance, "passed": True, "count": 0})
            cur["count"] += 1
            if r.identity.startswith("chain"):
                cur["worst"] = min(cur["worst"], r.residual) if cur["count"] > 1 else r.residual
            else:
                cur["worst"] = max(cur["worst"], abs(r.residual))
            cur["passed"] = cur["passed"] and r.passed
        return out

    def to_dict(self) -> dict:
        return {
            "schema": "sasaki-ke/functionals/1",
            "seed": self.seed,
            "passed": self.passed,
            "summary": self.worst(),
            "chain_binding": self.chain_binding,
            "values": self.values,
            "records": [r.to_dict() for r in self.records],
        }


def _random_detour(model: TransverseModel, rng: np.random.Generator, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Detour direction small enough to keep the bulged path admissible."""
    w = random_potential(model, rng, amplitude=0.5, margin=0.0).coeffs
    w[0] = 0.0
    grid = model.grid
    for _ in range(40):
        taus = np.linspace(0.0, 1.0, 21)[:, None]
        pots = a + taus * (b - a) + taus * (1 - taus) * w
        if grid.synthesis(density_coeffs(grid, model.psi_coeffs + pots)).min() > 0.05:
            return w
        w = 0.5 * w
    return np.zeros_like(w)


def verify_functional_identities(
    model: TransverseModel,
    samples: Sequence[tuple] | None = None,
    n_samples: int = 100,
    seed: int = 0,
    tol: float = 1e-7,
    chain_tol: float = 1e-9,
    derivative_step: float = 1e-3,
    derivative_tol: float = 1e-6,
) -> FunctionalReport:
    """
    Check the cocycle, translation, path-independence, J-correction, chain
    and derivative identities on sampled potentials.

    Parameters
    ----------
    model : TransverseModel
    samples : sequence of (a, b, c) potential triples, optional
        Generated from ``seed`` when omitted (``n_samples`` triples).
    tol : float
        Tolerance for equality residuals.
    chain_tol : float
        Allowed negative margin in the inequality chain.
    derivative_step, derivative_tol : float
        Central-difference step in ``t`` and tolerance for the derivative
        identity of ``I - J`` along ``t -> a + t (b - a)``.

    Returns
    -------
    FunctionalReport
        Failures are recorded, never raised.
    """
    rng = np.random.default_rng(seed)
    if samples is None:
        samples = [tuple(random_potential(model, rng) for _ in range(3)) for _ in range(n_samples)]
    report = FunctionalReport(seed=seed)
    m = model.m
    grid = model.grid
    V = model.volume
    weights = model.fiber_length * model.area_weights
    binding = {"lower": 0, "middle": 0, "upper": 0}

    for k, triple in enumerate(samples):
        a, b, c = (_coeffs(f) for f in triple)
        C1, C2 = rng.normal(size=2)
        shift1 = np.zeros_like(a)
        shift1[0] = C1 * np.sqrt(4 * np.pi)
        shift2 = np.zeros_like(a)
        shift2[0] = C2 * np.sqrt(4 * np.pi)

        L_ab = functional_L(model, a, b)
        L_bc = functional_L(model, b, c)
        L_ac = functional_L(model, a, c)
        M_ab = functional_M(model, a, b)
        M_bc = functional_M(model, b, c)
        M_ac = functional_M(model, a, c)
        I_ab = functional_I(model, a, b)
        J_ab = functional_J(model, a, b)
        report.values.append({"sample": k, "L": L_ab, "M": M_ab, "I": I_ab, "J": J_ab})

        report.add("L cocycle", k, L_ab + L_bc - L_ac, tol)
        report.add("M cocycle", k, M_ab + M_bc - M_ac, tol)
        report.add("L translation", k, functional_L(model, a, b + shift2) - L_ab - C2, tol)
        report.add("M translation", k, functional_M(model, a + shift1, b + shift2) - M_ab, tol)
        report.add("I constant shift", k, functional_I(model, a, b + shift2) - I_ab, tol)
        report.add("J constant shift", k, functional_J(model, a, b + shift2) - J_ab, tol)

        detour = _random_detour(model, rng, a, b)
        warp = ("quadratic", "sine")[k % 2]
        bent = FunctionalPath(a, b, detour=detour, warp=warp)
        report.add("L path independence", k, functional_L(model, a, b, bent) - L_ab, tol)
        report.add("M path independence", k, functional_M(model, a, b, bent) - M_ab, tol)
        report.add("J direct vs path", k, functional_J(model, a, b, bent) - J_ab, tol)

        J_bc = functional_J(model, b, c)
        J_ac = functional_J(model, a, c)
        rho_a = grid.synthesis(density_coeffs(grid, model.psi_coeffs + a))
        rho_b = grid.synthesis(density_coeffs(grid, model.psi_coeffs + b))
        correction = np.sum(grid.synthesis(c - b) * (rho_a - rho_b) * weights) / V
        report.add("J correction identity", k, J_ab + J_bc - J_ac + correction, tol)

        lo, mid, hi = chain_margins(I_ab, J_ab, m)
        report.add("chain I >= 0", k, lo, chain_tol, lower_bound=True)
        report.add("chain (m+1)(I-J) >= I", k, mid, chain_tol, lower_bound=True)
        report.add("chain m I >= (m+1)(I-J)", k, hi, chain_tol, lower_bound=True)
        scale = max(abs(I_ab), 1.0)
        binding["lower"] += int(abs(lo) <= chain_tol * scale)
        binding["middle"] += int(abs(mid) <= chain_tol * scale)
        binding["upper"] += int(abs(hi) <= chain_tol * scale)

        fd, integral = derivative_identity(model, a, b, 0.5, derivative_step)
        report.add("I-J derivative identity", k, fd - integral, derivative_tol)

    report.chain_binding = binding
    return report


def i_minus_j(model: TransverseModel, phi, phi2) -> float:
    return functional_I(model, phi, phi2) - functional_J(model, phi, phi2)


def derivative_identity(model: TransverseModel, phi, direction, t: float, step: float) -> tuple[float, float]:
    """
    Both sides of the derivative identity for ``I - J`` along ``phi_t = phi + t * direction``.

    Returns
    -------
    fd : float
        Central difference of ``t -> (I - J)(phi, phi_t)``.
    integral : float
        ``(1/V) int (phi_t - phi) box_{phi_t}(d phi_t/dt) (d eta_{phi_t})^m wedge eta``.
    """
    a = _coeffs(phi)
    d = _coeffs(direction)
    fd = (i_minus_j(model, a, a + (t + step) * d) - i_minus_j(model, a, a + (t - step) * d)) / (2.0 * step)
    grid = model.grid
    rho_t = _state_density(model, a + t * d)
    box = 2.0 * grid.synthesis(grid.laplacian(d)) / rho_t
    integral = np.sum(grid.synthesis(t * d) * box * rho_t * model.area_weights) * model.fiber_length / model.volume
    return float(fd), float(integral)
