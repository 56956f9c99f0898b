"""
A priori estimates along a continuity family.

Four quantitative checks are collected here:

* the Green kernel of the basic Laplacian and its lower bound ``K``;
* the rescaled Sasakian family ``eta_{u,mu} = mu^{-1} eta_u`` with
  ``mu = 1/t``: volume, assembled Ricci lower bound and a graph estimate of
  the diameter on the total space;
* the oscillation bound ``osc u_t <= I(0, u_t) + 2m (K V / m! + C / t)`` with
  a fitted ``C``, together with the C^0 chain through the point ``x_t``;
* monotonicity of ``M(0, u_t)`` and its derivative identity
  ``dM/dt = -(2m+2)(1-t) d(I - J)/dt``.

Kernel conventions
------------------
The Green kernel is built for the complex Laplacian ``box = 2 L / rho_u`` with
the lifted measure ``dmu_u = ell (rho_u / 4) dOmega``:

    f(x) = mean_u(f) + int G(x, y) (box f)(y) dmu_u(y),

so ``G`` acts as ``1/4`` on degree-one harmonics of the canonical model.  The
Riemannian Laplacian of the total space is ``2 box`` on basic functions, so
its Green kernel is ``G / 2``; the constant ``K`` in the oscillation bound is
``-min G / 2``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import ConvergenceError, SingularOperatorError
from .functionals import functional_I, functional_J, functional_M
from .ma_solver import ContinuityFamily, SolverOptions, continuity_solve, l_zero
from .model import (
    AREA_SCALE,
    BasicFunction,
    MetricState,
    TransverseModel,
    build_model,
    complex_laplacian,
    metric_state,
    sasaki_ricci_bound,
)
from .sphere import SphereGrid

__all__ = [
    "EstimateRecord",
    "EstimateReport",
    "GreenKernel",
    "MonotonicityStudy",
    "RescaledMetric",
    "apriori_report",
    "estimate_diameter",
    "green_lower_bound",
    "monotonicity_refinement",
    "refine_family",
    "rescaled_family_check",
]


# ---------------------------------------------------------------------------
# Green kernel
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GreenKernel:
    """
    Spectral Green kernel of ``box`` for a state, restricted to a harmonic basis.

    ``G(x, y) = sum_k phi_k(x) phi_k(y) / lambda_k`` over the nonzero
    eigenpairs of the generalized problem ``S phi = lambda M phi`` with

        S_ij = (ell/2) int grad Y_i . grad Y_j dOmega,
        M_ij = (ell/4) int rho_u Y_i Y_j dOmega.

    Attributes
    ----------
    state : MetricState
    index : ndarray of int
        Coefficient positions of the basis (active harmonics).
    eigenvalues : ndarray
        Nonzero eigenvalues of ``box``.
    modes : ndarray, shape (len(index), len(eigenvalues))
        ``M``-orthonormal eigenvectors.
    constant_mode : ndarray
        The normalised constant eigenvector.
    min_entry : float
        Smallest kernel value over the sample point pairs.
    sample_band : int
        Band limit of the Gauss grid whose nodes sample the kernel.
    symmetry_error, row_mean_error : float
        ``max |G - G^T|`` and ``max |int G(x, .) dmu_u|`` over the samples.
    """

    state: MetricState = field(repr=False)
    index: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    modes: np.ndarray = field(repr=False)
    constant_mode: np.ndarray = field(repr=False)
    min_entry: float = 0.0
    sample_band: int = 0
    symmetry_error: float = 0.0
    row_mean_error: float = 0.0

    @property
    def K(self) -> float:
        """Lower bound constant of the Riemannian Green function, ``-min G / 2``."""
        return max(0.0, -0.5 * self.min_entry)

    @property
    def K_box(self) -> float:
        """``-min G`` for the complex-Laplacian kernel itself."""
        return max(0.0, -self.min_entry)

    def _moments(self, f: BasicFunction) -> np.ndarray:
        """``int Y_i f dmu_u`` for the basis functions."""
        model = self.state.model
        w = model.fiber_length * AREA_SCALE
        return w * model.grid.analysis(f.values * self.state.density)[self.index]

    def apply(self, f: BasicFunction) -> BasicFunction:
        """``x -> int G(x, y) f(y) dmu_u(y)``."""
        b = self.modes.T @ self._moments(f)
        c = np.zeros(self.state.model.grid.size)
        c[self.index] = self.modes @ (b / self.eigenvalues)
        return self.state.model.function_from_coeffs(c)

    def mean(self, f: BasicFunction) -> float:
        """Average of ``f`` against ``dmu_u``."""
        return float(np.sum(f.values * self.state.measure) / self.state.volume)

    def reproduction_error(self, f: BasicFunction) -> float:
        """``max |f - mean(f) - G box f|`` on the grid."""
        rebuilt = self.apply(complex_laplacian(self.state, f)) + self.mean(f)
        return float(np.abs(rebuilt.values - f.values).max())

    def values(self, theta_a, phi_a, theta_b, phi_b) -> np.ndarray:
        """Kernel matrix between two point sets."""
        grid = self.state.model.grid
        A = self.modes.T @ grid.basis_values(theta_a, phi_a, self.index)
        B = self.modes.T @ grid.basis_values(theta_b, phi_b, self.index)
        return (A / self.eigenvalues[:, None]).T @ B

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "K_box": self.K_box,
            "min_entry": self.min_entry,
            "sample_band": self.sample_band,
            "symmetry_error": self.symmetry_error,
            "row_mean_error": self.row_mean_error,
            "basis_size": int(self.index.size),
            "first_eigenvalue": float(self.eigenvalues[0]),
        }


def _mass_matrix(state: MetricState, index: np.ndarray, chunk: int = 256) -> np.ndarray:
    model = state.model
    grid = model.grid
    n = index.size
    M = np.empty((n, n))
    w = model.fiber_length * AREA_SCALE
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        E = np.zeros((stop - start, grid.size))
        E[np.arange(stop - start), index[start:stop]] = 1.0
        vals = grid.synthesis(E) * state.density
        M[:, start:stop] = w * grid.analysis(vals)[:, index].T
    return 0.5 * (M + M.T)


def green_lower_bound(
    state: MetricState,
    even_only: bool | None = None,
    sample_band: int = 24,
    block: int = 1024,
) -> tuple[float, GreenKernel]:
    """
    Green kernel of the basic Laplacian and its lower bound.

    Parameters
    ----------
    state : MetricState
        Admissible state; its measure ``dmu_u`` is the lifted volume form.
    even_only : bool, optional
        Restrict the kernel to even harmonics (defaults to the model's mode).
        The restricted kernel reproduces even functions only.
    sample_band : int
        The kernel minimum is taken over node pairs of a Gauss grid of this
        band limit (``(3n/2 + 2) (3n + 2)`` points), independent of the
        model resolution.
    block : int
        Row block size for the pairwise minimum.

    Returns
    -------
    K : float
        ``-min G / 2 >= 0``, the lower-bound constant for the Riemannian
        Laplacian of the total space.
    kernel : GreenKernel

    Raises
    ------
    SingularOperatorError
        The discrete Laplacian has more than one zero mode.
    """
    state.require_positive()
    model = state.model
    grid = model.grid
    if even_only is None:
        even_only = model.even_only
    index = np.nonzero(grid.degree_mask(even_only))[0]
    S = 0.5 * model.fiber_length * grid.eigenvalues[index]
    M = _mass_matrix(state, index)
    lam, vec = sla.eigh(np.diag(S), M)
    if lam[1] < 1e-8 * max(1.0, lam[-1]):
        raise SingularOperatorError("discrete Laplacian has a multidimensional kernel", float(lam[1]))

    kernel = GreenKernel(
        state=state,
        index=index,
        eigenvalues=lam[1:],
        modes=vec[:, 1:],
        constant_mode=vec[:, 0],
        sample_band=int(sample_band),
    )

    samples = SphereGrid(sample_band)
    th, ph = samples.node_coordinates()
    th, ph = th.ravel(), ph.ravel()
    F = kernel.modes.T @ grid.basis_values(th, ph, index)
    Fs = F / kernel.eigenvalues[:, None]
    lo = np.inf
    sym = 0.0
    for start in range(0, th.size, block):
        stop = min(start + block, th.size)
        rows = Fs[:, start:stop].T @ F
        lo = min(lo, float(rows.min()))
        cols = F[:, start:stop].T @ Fs
        sym = max(sym, float(np.abs(rows - cols).max()))
    kernel.min_entry = lo
    kernel.symmetry_error = sym

    # int G(x, y) dmu_u(y) = sum_k phi_k(x) <phi_k, 1> / lambda_k
    ones = model.function_from_values(np.ones(grid.shape))
    moments = kernel.modes.T @ kernel._moments(ones)
    kernel.row_mean_error = float(np.abs((moments / kernel.eigenvalues) @ F).max())
    return kernel.K, kernel


# ---------------------------------------------------------------------------
# rescaled family and diameter
# ---------------------------------------------------------------------------


def _hopf_samples(n: int, seed: int) -> np.ndarray:
    """``n`` points of S^3 in C^2, uniformly distributed."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x[:, :2] + 1j * x[:, 2:]


def _hopf_project(z: np.ndarray) -> np.ndarray:
    """Hopf map to the unit sphere, ``(2 z1 conj(z2), |z1|^2 - |z2|^2)``."""
    w = 2.0 * z[:, 0] * np.conj(z[:, 1])
    return np.column_stack([w.real, w.imag, np.abs(z[:, 0]) ** 2 - np.abs(z[:, 1]) ** 2])


@dataclass(frozen=True)
class DiameterEstimate:
    """
    Graph estimate of the diameter of ``(S^3, g_{u,mu})``.

    ``method`` records the estimator and its resolution (sample count and
    neighbour count); ``tolerance`` is the relative resolution tolerance the
    estimate is certified to at the default resolution.
    """

    value: float
    method: str
    samples: int
    neighbours: int
    sweeps: int
    tolerance: float = 0.05

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "samples": self.samples,
            "neighbours": self.neighbours,
            "sweeps": self.sweeps,
            "tolerance": self.tolerance,
        }


def estimate_diameter(
    state: MetricState,
    t: float,
    samples: int = 6000,
    neighbours: int = 24,
    sweeps: int = 3,
    seed: int = 0,
) -> DiameterEstimate:
    """
    Diameter of ``g_{u,mu} = t g^T_u + t^2 eta_u (x) eta_u`` by graph shortest paths.

    Points are sampled uniformly on S^3, joined to their nearest neighbours
    in C^2, and each edge ``p -> q`` receives the local length

        |v|^2 = t rho_u |dx|^2 / 4 + t^2 (Im<p, v> - det(x, grad Psi, dx))^2

    with ``v = q - p``, ``dx`` the displacement of the Hopf images on the unit
    sphere, ``Psi = psi + u`` the total potential and the endpoint averages of
    ``rho_u``, ``x`` and ``grad Psi``.  The diameter is approximated by
    repeated double sweeps of Dijkstra's algorithm.
    """
    if not 0 < t <= 1:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    state.require_positive()
    grid = state.model.grid
    z = _hopf_samples(samples, seed)
    x = _hopf_project(z)
    theta = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
    phi = np.arctan2(x[:, 1], x[:, 0])
    rho = grid.evaluate(state.density_coeffs, theta, phi)
    _, pt, pp = grid.evaluate(state.potential_coeffs, theta, phi, derivatives=True)
    e_t = np.column_stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
    e_p = np.column_stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
    grad = pt[:, None] * e_t + pp[:, None] * e_p

    pts = np.column_stack([z.real, z.imag])
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=neighbours + 1)
    i = np.repeat(np.arange(samples), neighbours)
    j = nbr[:, 1:].ravel()
    v = z[j] - z[i]
    vert = np.sum(np.conj(z[i]) * v, axis=1).imag
    dx = x[j] - x[i]
    xm = 0.5 * (x[i] + x[j])
    gm = 0.5 * (grad[i] + grad[j])
    vert = vert - np.einsum("ij,ij->i", xm, np.cross(gm, dx))
    horiz = 0.5 * (rho[i] + rho[j]) * np.einsum("ij,ij->i", dx, dx) / 4.0
    length = np.sqrt(t * horiz + t * t * vert**2)
    graph = coo_matrix((length, (i, j)), shape=(samples, samples)).tocsr()
    graph = graph.maximum(graph.T)

    best = 0.0
    start = 0
    rng = np.random.default_rng(seed + 1)
    for _ in range(sweeps):
        d = dijkstra(graph, directed=False, indices=start)
        if not np.all(np.isfinite(d)):
            raise ConvergenceError("sample graph is disconnected; increase neighbours")
        far = int(np.argmax(d))
        d2 = dijkstra(graph, directed=False, indices=far)
        best = max(best, float(d2.max()))
        start = int(rng.integers(samples))
    return DiameterEstimate(
        value=best,
        method=f"knn-graph(n={samples},k={neighbours})",
        samples=samples,
        neighbours=neighbours,
        sweeps=sweeps,
    )


@dataclass
class RescaledMetric:
    """
    The Sasakian structure ``(mu^{-1} eta_u, mu xi)`` with ``mu = 1/t``.

    Attributes
    ----------
    state : MetricState
    t, mu : float
    volume : float
        Quadrature volume of ``g_{u,mu}``, ``mu^{-(m+1)} int dmu_u``.
    expected_volume : float
        ``t^{m+1} V``.
    transverse_ricci_min : float
        Smallest eigenvalue of ``Ric^T`` relative to ``g^T_{u,mu}``.
    ricci_bound : float
        Assembled lower bound of the full Ricci tensor of ``g_{u,mu}``.
    diameter : DiameterEstimate or None
    """

    state: MetricState = field(repr=False)
    t: float
    mu: float
    volume: float
    expected_volume: float
    transverse_ricci_min: float
    ricci_bound: float
    diameter: DiameterEstimate | None = None

    @property
    def volume_error(self) -> float:
        return abs(self.volume - self.expected_volume) / self.expected_volume

    @property
    def myers_ok(self) -> bool:
        m = self.state.model.m
        return self.ricci_bound >= 2 * m - 1e-6

    @property
    def diameter_ok(self) -> bool:
        if self.diameter is None:
            return True
        return self.diameter.value <= math.pi * (1.0 + self.diameter.tolerance)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "mu": self.mu,
            "volume": self.volume,
            "expected_volume": self.expected_volume,
            "volume_error": self.volume_error,
            "transverse_ricci_min": self.transverse_ricci_min,
            "ricci_bound": self.ricci_bound,
            "myers_ok": self.myers_ok,
            "diameter": None if self.diameter is None else self.diameter.to_dict(),
            "diameter_ok": self.diameter_ok,
        }


def rescaled_family_check(
    state: MetricState,
    t: float,
    diameter: bool = True,
    samples: int = 6000,
    neighbours: int = 24,
    seed: int = 0,
) -> RescaledMetric:
    """
    Volume, Ricci bound and diameter of the rescaled metric ``g_{u, 1/t}``.

    Raises
    ------
    ValueError
        ``t`` outside (0, 1].
    """
    if not 0 < t <= 1:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    state.require_positive()
    model = state.model
    m = model.m
    mu = 1.0 / t
    vol = mu ** (-(m + 1)) * state.volume
    ric_min = float(state.scalar_curvature.min()) / m
    return RescaledMetric(
        state=state,
        t=float(t),
        mu=mu,
        volume=vol,
        expected_volume=t ** (m + 1) * model.volume,
        transverse_ricci_min=ric_min / t,
        ricci_bound=sasaki_ricci_bound(state, t),
        diameter=estimate_diameter(state, t, samples, neighbours, seed=seed) if diameter else None,
    )


# ---------------------------------------------------------------------------
# a priori report
# ---------------------------------------------------------------------------


@dataclass
class EstimateRecord:
    """Per-``t`` quantities of the estimate chain."""

    t: float
    osc: float
    sup: float
    inf: float
    I: float
    J: float
    M: float
    L: float
    mean_background: float
    mean_state: float
    upper_excess: float
    lower_excess: float
    t_osc: float
    x_t: tuple[float, float]
    u_at_x_t: float
    combination_at_x_t: float
    sign_change: bool
    chain_gap: float
    oscillation_slack: float = float("nan")
    dM_dt: float = float("nan")
    identity_rhs: float = float("nan")
    identity_error: float = float("nan")
    rescaled: RescaledMetric | None = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "rescaled"}
        out["x_t"] = list(self.x_t)
        out["rescaled"] = None if self.rescaled is None else self.rescaled.to_dict()
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}


@dataclass
class EstimateReport:
    """
    Estimate chain over a family.

    Attributes
    ----------
    records : list of EstimateRecord
    K : float
        Green lower-bound constant of the background metric.
    C : float
        Fitted constant of the lower oscillation bound,
        ``max_t t (mean_u u_t - inf u_t) / (2m)``.
    volume : float
    green : dict
        Green-kernel diagnostics (reproduction, symmetry, row means).
    checks : dict
        Named pass flags with margins.
    """

    records: list[EstimateRecord]
    K: float
    C: float
    volume: float
    eqn: str
    m: int
    green: dict
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "schema": "sasaki-ke/estimates/1",
            "eqn": self.eqn,
            "m": self.m,
            "K": self.K,
            "C": self.C,
            "volume": self.volume,
            "green": self.green,
            "checks": self.checks,
            "passed": self.passed,
            "records": [r.to_dict() for r in self.records],
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for r in self.records:
            row = {k: v for k, v in r.to_dict().items() if not isinstance(v, (list, dict)) and v is not None}
            row["x_theta"], row["x_phi"] = r.x_t
            if r.rescaled is not None:
                row["volume_error"] = r.rescaled.volume_error
                row["ricci_bound"] = r.rescaled.ricci_bound
                if r.rescaled.diameter is not None:
                    row["diameter"] = r.rescaled.diameter.value
            rows.append(row)
        return rows


def _three_point_derivative(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order derivative on a nonuniform grid (one-sided at the ends)."""
    return np.gradient(f, t, edge_order=2)


def _record(state: MetricState, t: float, eqn: str, traces: dict[str, float]) -> EstimateRecord:
    model = state.model
    m = model.m
    ec = model.einstein_constant
    u = state.u
    zero = np.zeros(model.grid.size)
    I = traces.get("I")
    if I is None:
        I = functional_I(model, zero, u.coeffs)
    J = traces.get("J")
    if J is None:
        J = functional_J(model, zero, u.coeffs)
    M = traces.get("M")
    if M is None:
        M = functional_M(model, zero, u.coeffs)
    L = l_zero(state)
    background = metric_state(model)
    mean0 = float(np.sum(u.values * background.measure) / model.volume)
    mean_u = float(np.sum(u.values * state.measure) / model.volume)
    sup, inf = float(u.values.max()), float(u.values.min())

    # log(rho_u / rho) = -t(2m+2) u - (2m+2) L + h for (s2); no L term for (s1)
    comb = -t * ec * u.values + model.h.values
    if eqn == "s2":
        comb = comb - ec * L
    k = np.unravel_index(np.argmin(np.abs(comb)), comb.shape)
    # a vanishing combination (canonical model) carries roundoff of either sign
    slack = 1e-12 * max(1.0, float(np.abs(comb).max()))
    theta, phi = model.grid.node_coordinates()
    u_x = float(u.values[k])
    return EstimateRecord(
        t=float(t),
        osc=sup - inf,
        sup=sup,
        inf=inf,
        I=float(I),
        J=float(J),
        M=float(M),
        L=L,
        mean_background=mean0,
        mean_state=mean_u,
        upper_excess=sup - mean0,
        lower_excess=mean_u - inf,
        t_osc=t * (sup - inf),
        x_t=(float(theta[k]), float(phi[k])),
        u_at_x_t=u_x,
        combination_at_x_t=float(comb[k]),
        sign_change=bool(comb.min() <= slack and comb.max() >= -slack),
        chain_gap=abs(L - u_x) - (sup - inf),
    )


def apriori_report(
    family: ContinuityFamily,
    rescaled: bool = True,
    diameter_samples: int = 6000,
    diameter_neighbours: int = 24,
    green_sample_band: int = 24,
    workers: int = 1,
    monotonicity_tol: float = 1e-8,
    chain_tol: float = 1e-9,
) -> EstimateReport:
    """
    Run the estimate chain over a continuity family.

    Parameters
    ----------
    family : ContinuityFamily
        At least five converged nodes.
    rescaled : bool
        Include the rescaled-metric checks (with diameter) at every ``t > 0``.
    workers : int
        Threads used for the per-node records.

    Raises
    ------
    ValueError
        The family is too sparse for second-order finite differences.
    """
    fam = family.sorted()
    if len(fam) < 5:
        raise ValueError(f"family needs at least 5 nodes for finite differences, has {len(fam)}")
    model = fam.model
    m = model.m
    V = model.volume
    ts = np.asarray(fam.ts)

    K, kernel = green_lower_bound(metric_state(model), sample_band=green_sample_band)
    rng = np.random.default_rng(0)
    probe = model.function_from_coeffs(
        np.where(model.active_mask, rng.normal(size=model.grid.size) / (1.0 + model.grid.degrees) ** 2, 0.0)
    )
    green = kernel.to_dict()
    green["reproduction_error"] = kernel.reproduction_error(probe)

    def traces_at(k):
        return {name: vals[k] for name, vals in fam.traces.items() if len(vals) == len(fam.ts)}

    def build(k):
        rec = _record(fam.states[k], fam.ts[k], fam.eqn, traces_at(k))
        if rescaled and fam.ts[k] > 0:
            rec.rescaled = rescaled_family_check(
                fam.states[k], fam.ts[k], samples=diameter_samples, neighbours=diameter_neighbours
            )
        return rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(build, range(len(fam))))
        # threads finish in order of submission through map
    else:
        records = [build(k) for k in range(len(fam))]

    Mv = np.array([r.M for r in records])
    IJ = np.array([r.I - r.J for r in records])
    dM = _three_point_derivative(ts, Mv)
    dIJ = _three_point_derivative(ts, IJ)
    rhs = -(2 * m + 2) * (1.0 - ts) * dIJ
    for k, r in enumerate(records):
        r.dM_dt, r.identity_rhs, r.identity_error = float(dM[k]), float(rhs[k]), float(abs(dM[k] - rhs[k]))

    positive = [r for r in records if r.t > 0]
    C = max([r.t * r.lower_excess / (2 * m) for r in positive] + [0.0])
    bound_K = 2 * m * K * V / math.factorial(m)
    for r in positive:
        r.oscillation_slack = r.I + 2 * m * (K * V / math.factorial(m) + C / r.t) - r.osc

    interior = records[1:-1]
    checks = {}
    worst_dM = max(r.dM_dt for r in interior)
    checks["M monotonicity"] = {
        "passed": bool(worst_dM <= monotonicity_tol),
        "margin": monotonicity_tol - worst_dM,
        "max_dM_dt": worst_dM,
        "max_identity_error": max(r.identity_error for r in interior),
    }
    checks["Green bound"] = {
        "passed": bool(
            green["reproduction_error"] < 1e-8
            and green["symmetry_error"] < 1e-10
            and green["row_mean_error"] < 1e-12
            and K >= 0
        ),
        "margin": 1e-8 - green["reproduction_error"],
        "K": K,
    }
    worst_upper = max(r.upper_excess - bound_K for r in records)
    worst_slack = min((r.oscillation_slack for r in positive), default=0.0)
    checks["oscillation"] = {
        "passed": bool(worst_upper <= 1e-10 and worst_slack >= -1e-10),
        "margin": min(-worst_upper, worst_slack),
        "C": C,
        "upper_bound": bound_K,
    }
    worst_gap = max(r.chain_gap for r in records)
    checks["C0 chain"] = {
        "passed": bool(all(r.sign_change for r in records) and worst_gap <= chain_tol),
        "margin": chain_tol - worst_gap,
        "max_t_osc": max(r.t_osc for r in records),
        "max_sup_abs": max(max(abs(r.sup), abs(r.inf)) for r in records),
    }
    if rescaled and positive:
        vol_err = max(r.rescaled.volume_error for r in positive)
        ric = min(r.rescaled.ricci_bound for r in positive)
        diam = [r.rescaled.diameter.value for r in positive if r.rescaled.diameter is not None]
        checks["rescaled family"] = {
            "passed": bool(vol_err < 1e-10 and ric >= 2 * m - 1e-6 and all(r.rescaled.diameter_ok for r in positive)),
            "margin": min(1e-10 - vol_err, ric - (2 * m - 1e-6)),
            "max_volume_error": vol_err,
            "min_ricci_bound": ric,
            "max_diameter": max(diam) if diam else None,
        }
    return EstimateReport(records=records, K=K, C=C, volume=V, eqn=fam.eqn, m=m, green=green, checks=checks)


# ---------------------------------------------------------------------------
# refinement studies
# ---------------------------------------------------------------------------


def refine_family(family: ContinuityFamily, factor: int = 2, options: SolverOptions | None = None) -> ContinuityFamily:
    """
    Re-solve a family on a grid with ``factor`` times the band limit.

    The refined solve follows the same ``t`` nodes as a fixed schedule.
    """
    model = family.model
    if model.config is None:
        raise ValueError("family model carries no configuration to refine")
    config = replace(model.config, band_limit=model.config.band_limit * factor)
    fine = build_model(config)
    fam = family.sorted()
    base = options or family.options or SolverOptions()
    ts = tuple(t for t in fam.ts if t > fam.ts[0])
    opts = replace(base, schedule=ts, t_final=max(fam.ts), checkpoints=())
    return continuity_solve(fine, family.eqn, opts, t_start=fam.ts[0])


@dataclass
class MonotonicityStudy:
    """
    Derivative-identity errors on a uniform ``t`` grid and its halving.

    ``errors_coarse`` and ``errors_fine`` are compared at the interior nodes
    of the coarse grid; ``order`` is ``log2`` of the ratio of their maxima.
    """

    dt: float
    nodes: np.ndarray
    errors_coarse: np.ndarray
    errors_fine: np.ndarray
    dM_coarse: np.ndarray
    dM_fine: np.ndarray

    @property
    def order(self) -> float:
        a = float(np.max(self.errors_coarse))
        b = float(np.max(self.errors_fine))
        return math.log2(a / b) if a > 0 and b > 0 else float("inf")

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.dM_coarse <= 1e-8) and np.all(self.dM_fine <= 1e-8))

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "nodes": self.nodes.tolist(),
            "errors_coarse": self.errors_coarse.tolist(),
            "errors_fine": self.errors_fine.tolist(),
            "order": self.order,
            "monotone": self.monotone,
        }


def _identity_errors(fam: ContinuityFamily) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ts = np.asarray(fam.ts)
    Mv = np.asarray(fam.traces["M"])
    IJ = np.asarray(fam.traces["I"]) - np.asarray(fam.traces["J"])
    m = fam.model.m
    dM = _three_point_derivative(ts, Mv)
    rhs = -(2 * m + 2) * (1.0 - ts) * _three_point_derivative(ts, IJ)
    return ts, dM, np.abs(dM - rhs)


def monotonicity_refinement(
    model: TransverseModel,
    eqn: str = "s2",
    dt: float = 0.1,
    options: SolverOptions | None = None,
) -> MonotonicityStudy:
    """
    Confirm the second-order match of the M derivative identity by halving ``dt``.

    Two fixed-schedule solves on ``[0, 1]`` with steps ``dt`` and ``dt / 2``.
    """
    n = int(round(1.0 / dt))
    if abs(n * dt - 1.0) > 1e-12 or n < 4:
        raise ValueError("dt must divide 1 into at least 4 steps")
    base = options or SolverOptions()
    fams = []
    for k in (n, 2 * n):
        sched = tuple(np.linspace(0.0, 1.0, k + 1)[1:])
        fam = continuity_solve(model, eqn, replace(base, schedule=sched, t_final=1.0, record_functionals=True))
        if fam.stop_reason:
            raise ConvergenceError(f"fixed-schedule solve stopped: {fam.stop_reason}")
        fams.append(fam.sorted())
    tc, dMc, ec = _identity_errors(fams[0])
    tf, dMf, ef = _identity_errors(fams[1])
    inner = slice(1, -1)
    nodes = tc[inner]
    pick = [int(np.argmin(np.abs(tf - s))) for s in nodes]
    return MonotonicityStudy(
        dt=dt,
        nodes=nodes,
        errors_coarse=ec[inner],
        errors_fine=ef[pick],
        dM_coarse=dMc[inner],
        dM_fine=dMf[1:-1],
    )
