"""
Real spherical harmonics on a Gauss-Legendre x uniform-longitude grid.

The quotient of the Hopf fibration is a 2-sphere, so every basic function
in this package lives here.  Functions are represented either by their
values on the quadrature grid or by real spherical-harmonic coefficients
in the flat layout ``k = l*l + l + m`` (``-l <= m <= l``).

Conventions
-----------
* Colatitude ``theta`` in (0, pi), longitude ``phi`` in [0, 2*pi).
* ``Y_l0 = P_l0(cos theta)``, ``Y_lm = sqrt(2) P_lm cos(m phi)`` and
  ``Y_l,-m = sqrt(2) P_lm sin(m phi)`` for ``m > 0``, with ``P_lm`` the
  associated Legendre functions normalised so that the ``Y`` are orthonormal
  on the unit sphere (total area ``4*pi``).  No Condon-Shortley phase.
* ``L`` below is the positive Laplace-Beltrami operator of the unit sphere,
  ``L Y_lm = l(l+1) Y_lm``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import roots_legendre

__all__ = [
    "SphereGrid",
    "degrees_orders",
    "ladder_derivative",
    "legendre_table",
    "n_coeffs",
    "sh_index",
]


def n_coeffs(band_limit: int) -> int:
    return (band_limit + 1) ** 2


def sh_index(l: int, m: int) -> int:
    """Flat index of the real harmonic of degree ``l`` and order ``m``."""
    if abs(m) > l:
        raise ValueError(f"|m| must not exceed l (got l={l}, m={m})")
    return l * l + l + m


def degrees_orders(band_limit: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and order arrays matching the flat coefficient layout."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(band_limit + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(band_limit + 1)])
    return ls, ms


def legendre_table(band_limit: int, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Normalised associated Legendre functions and their colatitude derivatives.

    Parameters
    ----------
    band_limit : int
        Maximum degree N.
    mu : ndarray, shape (npts,)
        cos(theta); must lie strictly inside (-1, 1).

    Returns
    -------
    P, dP : ndarray, shape (N+1, N+1, npts)
        ``P[m, l]`` and ``d/dtheta P[m, l]``; entries with ``l < m`` are zero.
    """
    mu = np.asarray(mu, dtype=float)
    N = band_limit
    s = np.sqrt(1.0 - mu * mu)
    P = np.zeros((N + 1, N + 1, mu.size))
    pmm = np.full(mu.size, 1.0 / np.sqrt(4.0 * np.pi))
    for m in range(N + 1):
        if m > 0:
            pmm = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        P[m, m] = pmm
        if m + 1 <= N:
            P[m, m + 1] = np.sqrt(2.0 * m + 3.0) * mu * pmm
        for l in range(m + 2, N + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[m, l] = a * (mu * P[m, l - 1] - b * P[m, l - 2])

    dP = np.zeros_like(P)
    for m in range(N + 1):
        for l in range(m, N + 1):
            term = l * mu * P[m, l]
            if l > m:
                c = np.sqrt((2.0 * l + 1.0) * (l - m) * (l + m) / (2.0 * l - 1.0))
                term = term - c * P[m, l - 1]
            dP[m, l] = term / s
    return P, dP


def ladder_derivative(P: np.ndarray) -> np.ndarray:
    """
    Colatitude derivative of a Legendre table via the order-raising and
    order-lowering ladder, independent of the degree recursion.

    ``P`` has the layout returned by :func:`legendre_table` (or any table
    that transforms like it, such as its derivative).
    """
    N = P.shape[0] - 1
    D = np.zeros_like(P)
    for l in range(1, N + 1):
        D[0, l] = -np.sqrt(l * (l + 1.0)) * P[1, l]
        for m in range(1, l + 1):
            lower = np.sqrt((l + m) * (l - m + 1.0)) * P[m - 1, l]
            upper = np.sqrt((l - m) * (l + m + 1.0)) * P[m + 1, l] if m < l else 0.0
            D[m, l] = 0.5 * (lower - upper)
    return D


class SphereGrid:
    """
    Quadrature grid and real spherical-harmonic transforms up to degree N.

    The default grid integrates polynomials of degree ``3N`` exactly, so a
    product of three band-limited fields (e.g. density times two basis
    functions) is resolved without aliasing.

    Parameters
    ----------
    band_limit : int
        Maximum spherical-harmonic degree N.
    nlat, nlon : int, optional
        Grid sizes.  Defaults are ``3N//2 + 2`` and ``3N + 2``.
    """

    def __init__(self, band_limit: int, nlat: int | None = None, nlon: int | None = None):
        if band_limit < 1:
            raise ValueError("band_limit must be positive")
        N = int(band_limit)
        self.band_limit = N
        self.nlat = int(nlat) if nlat is not None else (3 * N) // 2 + 2
        self.nlon = int(nlon) if nlon is not None else 3 * N + 2
        if self.nlat < N + 1 or self.nlon < 2 * N + 1:
            raise ValueError("grid too coarse for exact degree-2N quadrature")

        x, w = roots_legendre(self.nlat)
        # north to south
        self.mu = x[::-1].copy()
        self.lat_weights = w[::-1].copy()
        self.theta = np.arccos(self.mu)
        self.sin_theta = np.sqrt(1.0 - self.mu**2)
        self.phi = 2.0 * np.pi * np.arange(self.nlon) / self.nlon
        self.shape = (self.nlat, self.nlon)
        self.weights = np.outer(self.lat_weights, np.full(self.nlon, 2.0 * np.pi / self.nlon))

        self.P, self.dP = legendre_table(N, self.mu)
        self._P_over_sin = self.P / self.sin_theta
        self._wP = self.P * self.lat_weights

        self.degrees, self.orders = degrees_orders(N)
        self.size = n_coeffs(N)
        self.eigenvalues = (self.degrees * (self.degrees + 1)).astype(float)
        pos = self.orders >= 0
        self._pos = np.nonzero(pos)[0]
        self._neg = np.nonzero(~pos)[0]
        self._pos_ml = (self.orders[pos], self.degrees[pos])
        self._neg_ml = (-self.orders[~pos], self.degrees[~pos])
        self._m = np.arange(N + 1)
        self._scale = np.where(self._m == 0, 1.0, np.sqrt(2.0))

    # -- packing -----------------------------------------------------------

    def _to_ml(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        N = self.band_limit
        Z = np.zeros(coeffs.shape[:-1] + (N + 1, N + 1), dtype=complex)
        Z[(...,) + self._pos_ml] = coeffs[..., self._pos]
        Z[(...,) + self._neg_ml] -= 1j * coeffs[..., self._neg]
        return Z * self._scale[:, None]

    def _from_ml(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        out = np.empty(A.shape[:-2] + (self.size,))
        out[..., self._pos] = A[(...,) + self._pos_ml]
        out[..., self._neg] = B[(...,) + self._neg_ml]
        return out

    def _fourier_to_grid(self, F: np.ndarray) -> np.ndarray:
        n = self.nlon
        X = np.zeros(F.shape[:-1] + (n // 2 + 1,), dtype=complex)
        X[..., : self.band_limit + 1] = F * (n / 2.0)
        X[..., 0] = F[..., 0] * n
        return np.fft.irfft(X, n=n, axis=-1)

    # -- transforms --------------------------------------------------------

    def synthesis(self, coeffs: np.ndarray) -> np.ndarray:
        """Grid values from coefficients; leading axes are batched."""
        Z = self._to_ml(coeffs)
        F = np.einsum("mlj,...ml->...jm", self.P, Z, optimize=True)
        return self._fourier_to_grid(F)

    def analysis(self, values: np.ndarray) -> np.ndarray:
        """
        Quadrature projection of grid values onto the harmonics up to degree N.

        Exact (a left inverse of :meth:`synthesis`) for band-limited input.
        """
        values = np.asarray(values, dtype=float)
        G = np.fft.rfft(values, axis=-1)[..., : self.band_limit + 1]
        G = G * (2.0 * np.pi / self.nlon) * self._scale
        A = np.einsum("mlj,...jm->...ml", self._wP, G.real, optimize=True)
        B = np.einsum("mlj,...jm->...ml", self._wP, -G.imag, optimize=True)
        return self._from_ml(A, B)

    def gradient(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Unit-sphere gradient components ``(d/dtheta, 1/sin(theta) d/dphi)``.
        """
        Z = self._to_ml(coeffs)
        Ft = np.einsum("mlj,...ml->...jm", self.dP, Z, optimize=True)
        Fp = np.einsum("mlj,...ml->...jm", self._P_over_sin, 1j * self._m[:, None] * Z, optimize=True)
        return self._fourier_to_grid(Ft), self._fourier_to_grid(Fp)

    def coordinate_laplacian(self, coeffs: np.ndarray) -> np.ndarray:
        """
        Grid values of ``L f`` from the coordinate formula
        ``-(f_tt + cot(theta) f_t + f_pp / sin(theta)**2)``.

        Second derivatives come from the ladder relations rather than from
        the eigenvalue, so this is an independent check of :meth:`laplacian`.
        """
        d1 = ladder_derivative(self.P)
        d2 = ladder_derivative(d1)
        Z = self._to_ml(coeffs)
        f_t = self._fourier_to_grid(np.einsum("mlj,...ml->...jm", d1, Z, optimize=True))
        f_tt = self._fourier_to_grid(np.einsum("mlj,...ml->...jm", d2, Z, optimize=True))
        m2 = (self._m**2)[:, None]
        f_pp = self._fourier_to_grid(np.einsum("mlj,...ml->...jm", self.P, -m2 * Z, optimize=True))
        cot = (self.mu / self.sin_theta)[:, None]
        return -(f_tt + cot * f_t + f_pp / (self.sin_theta**2)[:, None])

    def laplacian(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients of ``L f`` (positive unit-sphere Laplacian)."""
        return np.asarray(coeffs) * self.eigenvalues

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        """Integral over the unit sphere (area element dOmega)."""
        return np.sum(np.asarray(values) * self.weights, axis=(-2, -1))

    # -- pointwise evaluation ------------------------------------------------

    def evaluate(self, coeffs: np.ndarray, theta, phi, derivatives: bool = False):
        """
        Evaluate a coefficient vector at arbitrary points.

        With ``derivatives=True`` also returns the unit-sphere gradient
        components at the points (points must avoid the poles).
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        mu = np.cos(theta)
        P, dP = legendre_table(self.band_limit, mu)
        Z = self._to_ml(coeffs)
        E = np.exp(1j * np.outer(phi, self._m))
        val = np.einsum("mlp,ml,pm->p", P, Z, E, optimize=True).real
        if not derivatives:
            return val
        dth = np.einsum("mlp,ml,pm->p", dP, Z, E, optimize=True).real
        dph = np.einsum("mlp,ml,pm->p", P, 1j * self._m[:, None] * Z, E, optimize=True).real
        return val, dth, dph / np.sin(theta)

    def basis_values(self, theta, phi, index: np.ndarray | None = None) -> np.ndarray:
        """
        Values of the real harmonics at scattered points.

        Returns an array of shape ``(len(index), npoints)``; ``index`` selects
        coefficient positions (all by default).
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        if index is None:
            index = np.arange(self.size)
        l = self.degrees[index]
        m = self.orders[index]
        am = np.abs(m)
        P, _ = legendre_table(self.band_limit, np.cos(theta))
        scale = np.where(m == 0, 1.0, np.sqrt(2.0))[:, None]
        trig = np.where((m >= 0)[:, None], np.cos(np.outer(am, phi)), np.sin(np.outer(am, phi)))
        return scale * P[am, l, :] * trig

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Colatitude and longitude arrays of shape ``(nlat, nlon)``."""
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    def degree_mask(self, even_only: bool) -> np.ndarray:
        """Boolean mask over coefficients; all True unless ``even_only``."""
        if even_only:
            return self.degrees % 2 == 0
        return np.ones(self.size, dtype=bool)
