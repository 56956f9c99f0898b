"""
Spectrum of the weighted basic Laplacian and Hamiltonian holomorphic fields.

For a state with density ``rho_u`` and Ricci potential ``h`` the weighted
Laplacian ``box_h = dbar^* dbar`` acts on complex basic functions, the adjoint
taken for the Hermitian metric ``e^h d eta_u``:

    box_h f = -g^{1 1bar} (f_{1 1bar} + h_1 f_{1bar})
            = (2 / rho_u) (L f - grad h . grad f - i grad h x grad f)

with unit-sphere gradients and ``a x b = a_theta b_phi - a_phi b_theta``.
The drift term is complex, so real functions are not preserved unless ``h``
is constant.  The operator is discretized as the Hermitian generalized
eigenproblem ``(S + i A) x = lambda M x`` on the real harmonics,

    S_ij = (ell/2) int e^h grad Y_i . grad Y_j dOmega,
    A_ij = (ell/2) int e^h grad Y_i x grad Y_j dOmega,
    M_ij = (ell/4) int e^h rho_u Y_i Y_j dOmega.

On the even subspace ``A`` vanishes identically (the integrand is odd), and
the problem reduces to the real Rayleigh-Ritz compression of the form.

Eigenfunctions at ``2m + 2`` are Hamiltonian potentials of holomorphic
fields; the field is reconstructed in the stereographic chart
``z = tan(theta/2) e^{i phi}`` where ``g_{1 1bar} = rho_u / (2 (1 + |z|^2)^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import AmbiguousSpectrumError, ConvergenceError
from .model import BasicFunction, MetricState, TransverseModel, metric_state

__all__ = [
    "HamiltonianFieldRecord",
    "SpectrumResult",
    "basic_spectrum",
    "hamiltonian_detector",
    "multiplicity_table",
    "weighted_laplacian",
]


def weighted_laplacian(state: MetricState, h: BasicFunction, coeffs: np.ndarray) -> np.ndarray:
    """
    Pointwise ``box_h f`` on the grid for real or complex coefficients ``f``.

    Returns a complex array of grid values.
    """
    state.require_positive()
    g = state.model.grid
    coeffs = np.asarray(coeffs)
    ht, hp = g.gradient(h.coeffs)

    def part(c):
        lf = g.synthesis(g.laplacian(c))
        ft, fp = g.gradient(c)
        return 2.0 * (lf - ht * ft - hp * fp - 1j * (ht * fp - hp * ft)) / state.density

    out = part(coeffs.real)
    if np.iscomplexobj(coeffs):
        out = out + 1j * part(coeffs.imag)
    return out


def multiplicity_table(eigenvalues: np.ndarray, tol: float = 1e-6) -> list[tuple[float, int]]:
    """Group sorted eigenvalues into ``(mean value, multiplicity)`` clusters."""
    out: list[list] = []
    for lam in eigenvalues:
        if out and abs(lam - out[-1][0][-1]) <= tol * max(1.0, abs(lam)):
            out[-1][0].append(lam)
        else:
            out.append([[lam]])
    return [(float(np.mean(c[0])), len(c[0])) for c in out]


@dataclass
class SpectrumResult:
    """
    Lowest eigenpairs of ``box_h``.

    Attributes
    ----------
    eigenvalues : ndarray
        Nondecreasing eigenvalues.
    eigenvectors : ndarray of complex, shape (count, ncoeffs)
        Coefficients of the eigenfunctions, orthonormal for ``e^h dmu_u``.
        Within each eigenvalue cluster a real basis is chosen whenever the
        eigenspace is closed under conjugation.
    multiplicities : list of (value, multiplicity)
    lambda_1 : float
        First nonzero eigenvalue.
    orthonormality_error : float
        ``max |X^H M X - I|``.
    basis_degree : int
        Largest harmonic degree in the discretization basis.
    even_only : bool
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    multiplicities: list[tuple[float, int]]
    lambda_1: float
    orthonormality_error: float
    basis_degree: int
    even_only: bool
    state: MetricState = field(repr=False)
    h: BasicFunction = field(repr=False)
    bound: float = 4.0

    @property
    def eigenfunctions(self) -> list[BasicFunction]:
        """Real parts of the eigenfunctions (imaginary parts via :attr:`eigenfunctions_imag`)."""
        return [BasicFunction.from_coeffs(self.state.model.grid, c.real, False) for c in self.eigenvectors]

    @property
    def eigenfunctions_imag(self) -> list[BasicFunction]:
        return [BasicFunction.from_coeffs(self.state.model.grid, c.imag, False) for c in self.eigenvectors]

    @property
    def zero_multiplicity(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues) < 1e-8))

    @property
    def lambda_1_bound_ok(self) -> bool:
        return self.lambda_1 >= self.bound - 1e-6

    def to_dict(self, include_vectors: bool = True) -> dict:
        out = {
            "schema": "sasaki-ke/spectrum/1",
            "eigenvalues": self.eigenvalues.tolist(),
            "multiplicities": [[v, k] for v, k in self.multiplicities],
            "lambda_1": self.lambda_1,
            "lambda_1_bound": self.bound,
            "lambda_1_bound_ok": self.lambda_1_bound_ok,
            "zero_multiplicity": self.zero_multiplicity,
            "orthonormality_error": self.orthonormality_error,
            "basis_degree": self.basis_degree,
            "even_only": self.even_only,
        }
        if include_vectors:
            out["eigenvectors_real"] = self.eigenvectors.real.tolist()
            out["eigenvectors_imag"] = self.eigenvectors.imag.tolist()
        return out


def _basis(model: TransverseModel, even_only: bool, max_degree: int | None, limit: int) -> tuple[np.ndarray, int]:
    grid = model.grid
    mask = grid.degree_mask(even_only)
    if max_degree is None:
        max_degree = model.band_limit
        while np.count_nonzero(mask & (grid.degrees <= max_degree)) > limit:
            max_degree -= 1
    mask = mask & (grid.degrees <= max_degree)
    return np.nonzero(mask)[0], int(max_degree)


def _realify(V: np.ndarray, M: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Real M-orthonormal basis of span(V) when the span is closed under conjugation."""
    R = np.hstack([V.real, V.imag])
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    k = V.shape[1]
    if s.size <= k or s[k] > tol * s[0]:
        return V
    Q = U[:, :k]
    C = np.linalg.cholesky(Q.T @ M @ Q)
    return np.linalg.solve(C, Q.T).T.astype(complex)


def basic_spectrum(
    model: TransverseModel,
    state: MetricState | None = None,
    count: int = 12,
    even_only: bool | None = None,
    max_degree: int | None = None,
    basis_limit: int = 1200,
    chunk: int = 256,
) -> SpectrumResult:
    """
    Lowest ``count`` eigenpairs of the weighted basic Laplacian.

    Parameters
    ----------
    model : TransverseModel
    state : MetricState, optional
        Metric whose Laplacian is analysed (the background by default).  The
        weight is the state's normalised Ricci potential.
    count : int
        Number of eigenpairs.
    even_only : bool, optional
        Restrict to even harmonics (defaults to the model's symmetry mode).
    max_degree : int, optional
        Truncate the basis; by default the largest degree with at most
        ``basis_limit`` basis functions.

    Raises
    ------
    ConvergenceError
        The eigensolver fails.
    """
    if state is None:
        state = metric_state(model)
    state.require_positive()
    if even_only is None:
        even_only = model.even_only
    idx, lmax = _basis(model, even_only, max_degree, basis_limit)
    if not 1 <= count <= idx.size:
        raise ValueError(f"count must lie in [1, {idx.size}]")
    grid = model.grid
    h = state.ricci_potential
    eh = np.exp(h.values)
    wS = (0.5 * model.fiber_length * grid.weights * eh).ravel()
    wM = (0.25 * model.fiber_length * grid.weights * eh * state.density).ravel()
    n = idx.size
    Y = np.empty((n, grid.nlat * grid.nlon))
    Gt = np.empty_like(Y)
    Gp = np.empty_like(Y)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        E = np.zeros((stop - start, grid.size))
        E[np.arange(stop - start), idx[start:stop]] = 1.0
        Y[start:stop] = grid.synthesis(E).reshape(stop - start, -1)
        gt, gp = grid.gradient(E)
        Gt[start:stop] = gt.reshape(stop - start, -1)
        Gp[start:stop] = gp.reshape(stop - start, -1)
    Gtw = Gt * wS
    S = Gtw @ Gt.T + (Gp * wS) @ Gp.T
    C = Gtw @ Gp.T
    del Gt, Gp, Gtw
    A = C - C.T
    Y *= np.sqrt(wM)
    M = Y @ Y.T
    del Y
    K = 0.5 * (S + S.T) + 1j * A
    M = 0.5 * (M + M.T)
    try:
        vals, vecs = sla.eigh(K, M.astype(complex), subset_by_index=[0, count - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"generalized eigensolver failed: {exc}") from exc

    start = 0
    table = multiplicity_table(vals)
    for _, mult in table:
        vecs[:, start : start + mult] = _realify(vecs[:, start : start + mult], M)
        start += mult
    ortho = float(np.abs(vecs.conj().T @ M @ vecs - np.eye(count)).max())
    coeffs = np.zeros((count, grid.size), dtype=complex)
    coeffs[:, idx] = vecs.T
    nonzero = vals[np.abs(vals) > 1e-8]
    lam1 = float(nonzero[0]) if nonzero.size else float("nan")
    return SpectrumResult(
        eigenvalues=vals,
        eigenvectors=coeffs,
        multiplicities=table,
        lambda_1=lam1,
        orthonormality_error=ortho,
        basis_degree=lmax,
        even_only=bool(even_only),
        state=state,
        h=h,
        bound=model.einstein_constant,
    )


# ---------------------------------------------------------------------------
# Hamiltonian holomorphic fields
# ---------------------------------------------------------------------------


@dataclass
class HamiltonianFieldRecord:
    """
    A normalised Hamiltonian potential and its holomorphic field in the chart.

    Attributes
    ----------
    coefficients : ndarray of complex
        Spectral coefficients of the (generally complex) Hamiltonian function.
    eigenvalue : float
    normalization : complex
        ``int u_X e^h dmu`` (should vanish).
    eigen_residual : float
        Relative max-norm of ``(box_h - (2m+2)) u_X`` on the grid.
    chart_points : ndarray of complex
        Sample points ``z`` of the stereographic chart.
    field_coefficients : ndarray of complex
        ``X^1(z) = 2 g^{1 1bar} d u_X / d zbar`` at the sample points.
    hamiltonian_identity_residual : float
        Relative mismatch of ``dbar u_X = -(i/2) i(X) d eta`` in chart form,
        with ``dbar u_X`` from finite differences.
    holomorphicity_residual : float
        Relative size of ``d X^1 / d zbar`` by finite differences.
    """

    coefficients: np.ndarray
    eigenvalue: float
    normalization: complex
    eigen_residual: float
    chart_points: np.ndarray
    field_coefficients: np.ndarray
    hamiltonian_identity_residual: float
    holomorphicity_residual: float
    grid: object = field(repr=False, default=None)

    @property
    def u_X(self) -> BasicFunction:
        """Real part of the Hamiltonian function."""
        return BasicFunction.from_coeffs(self.grid, self.coefficients.real, False)

    @property
    def u_X_imag(self) -> BasicFunction:
        return BasicFunction.from_coeffs(self.grid, self.coefficients.imag, False)

    @property
    def is_real(self) -> bool:
        return bool(np.abs(self.coefficients.imag).max() < 1e-12)

    def passed(self, tol: float = 1e-6) -> bool:
        return (
            abs(self.normalization) < 1e-8
            and self.eigen_residual < tol
            and self.hamiltonian_identity_residual < tol
            and self.holomorphicity_residual < tol
        )

    def to_dict(self) -> dict:
        return {
            "eigenvalue": self.eigenvalue,
            "normalization": abs(self.normalization),
            "eigen_residual": self.eigen_residual,
            "hamiltonian_identity_residual": self.hamiltonian_identity_residual,
            "holomorphicity_residual": self.holomorphicity_residual,
            "is_real": self.is_real,
            "u_X_real": self.coefficients.real.tolist(),
            "u_X_imag": self.coefficients.imag.tolist(),
            "chart_points": [[z.real, z.imag] for z in self.chart_points],
            "field_coefficients": [[x.real, x.imag] for x in self.field_coefficients],
        }


def _chart_to_sphere(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return 2.0 * np.arctan(np.abs(z)), np.mod(np.angle(z), 2.0 * np.pi)


def _dzbar_spectral(grid, coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``d f / d zbar`` from spectral derivatives: ``(e^{i phi}/2)(f_r + i f_phi / r)``."""
    theta, phi = _chart_to_sphere(z)
    r = np.abs(z)
    out = np.zeros(z.shape, dtype=complex)
    for part, scale in ((coeffs.real, 1.0), (coeffs.imag, 1j)):
        if not np.any(part):
            continue
        _, ft, fp_over_sin = grid.evaluate(part, theta, phi, derivatives=True)
        f_r = ft * 2.0 / (1.0 + r * r)
        f_phi = fp_over_sin * np.sin(theta)
        out = out + scale * 0.5 * np.exp(1j * phi) * (f_r + 1j * f_phi / r)
    return out


def _evaluate_complex(grid, coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    theta, phi = _chart_to_sphere(z)
    return grid.evaluate(coeffs.real, theta, phi) + 1j * grid.evaluate(coeffs.imag, theta, phi)


def _metric_coefficient(grid, rho_coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    theta, phi = _chart_to_sphere(z)
    rho = grid.evaluate(rho_coeffs, theta, phi)
    return rho / (2.0 * (1.0 + np.abs(z) ** 2) ** 2)


def _field(grid, u_coeffs: np.ndarray, rho_coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    return 2.0 * _dzbar_spectral(grid, u_coeffs, z) / _metric_coefficient(grid, rho_coeffs, z)


def _fd_dzbar(fun, z: np.ndarray, step: float) -> np.ndarray:
    dx = (fun(z + step) - fun(z - step)) / (2.0 * step)
    dy = (fun(z + 1j * step) - fun(z - 1j * step)) / (2.0 * step)
    return 0.5 * (dx + 1j * dy)


def _chart_samples(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.5, 2.3, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.tan(theta / 2.0) * np.exp(1j * phi)


def hamiltonian_detector(
    model: TransverseModel,
    state: MetricState | None = None,
    spectrum: SpectrumResult | None = None,
    threshold: float = 1e-4,
    gap: float = 1e-3,
    count: int = 16,
    even_only: bool | None = None,
    n_points: int = 24,
    fd_step: float = 1e-5,
) -> list[HamiltonianFieldRecord]:
    """
    Basis of ``Ker(box_h - (2m+2))`` as normalised Hamiltonian field records.

    Parameters
    ----------
    threshold : float
        Eigenvalues within this distance of ``2m+2`` form the kernel.
    gap : float
        Eigenvalues in ``[threshold, gap)`` away from ``2m+2`` make the
        kernel dimension ambiguous.

    Returns
    -------
    list of HamiltonianFieldRecord
        Empty when no Hamiltonian holomorphic field exists.

    Raises
    ------
    AmbiguousSpectrumError
        Ill-separated cluster near ``2m+2``.
    """
    if spectrum is None:
        spectrum = basic_spectrum(model, state, count=count, even_only=even_only)
    state = spectrum.state
    target = model.einstein_constant
    dist = np.abs(spectrum.eigenvalues - target)
    ambiguous = (dist >= threshold) & (dist < gap)
    if np.any(ambiguous):
        raise AmbiguousSpectrumError(
            f"eigenvalues {spectrum.eigenvalues[ambiguous]} lie between the kernel threshold and the required gap"
        )
    kernel = np.nonzero(dist < threshold)[0]
    grid = model.grid
    h = spectrum.h
    eh_measure = np.exp(h.values) * state.measure
    z = _chart_samples(n_points)
    rho_c = state.density_coeffs
    records = []
    for k in kernel:
        c = spectrum.eigenvectors[k]
        vals = grid.synthesis(c.real) + 1j * grid.synthesis(c.imag)
        norm = complex(np.sum(vals * eh_measure))
        box = weighted_laplacian(state, h, c)
        eig_res = float(np.abs(box - target * vals).max() / max(np.abs(vals).max(), 1e-300))

        X = _field(grid, c, rho_c, z)
        # chart form of dbar u = -(i/2) i(X) d eta with d eta = i g_{1 1bar} dz ^ dzbar
        g11 = _metric_coefficient(grid, rho_c, z)
        dzbar_fd = _fd_dzbar(lambda w: _evaluate_complex(grid, c, w), z, fd_step)
        scale = max(np.abs(dzbar_fd).max(), 1e-300)
        ident = float(np.abs(dzbar_fd - 0.5 * g11 * X).max() / scale)
        holo = _fd_dzbar(lambda w: _field(grid, c, rho_c, w), z, fd_step)
        hol_res = float(np.abs(holo).max() / max(np.abs(X).max(), 1e-300))
        records.append(
            HamiltonianFieldRecord(
                coefficients=c,
                eigenvalue=float(spectrum.eigenvalues[k]),
                normalization=norm,
                eigen_residual=eig_res,
                chart_points=z,
                field_coefficients=X,
                hamiltonian_identity_residual=ident,
                holomorphicity_residual=hol_res,
                grid=grid,
            )
        )
    return records
