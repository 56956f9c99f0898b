import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import sph_harm_y

from sasaki_ke.sphere import SphereGrid, degrees_orders, n_coeffs, sh_index


@pytest.fixture(scope="module")
def grid():
    return SphereGrid(16)


def scipy_real_harmonic(l, m, theta, phi):
    """Real orthonormal harmonic without the Condon-Shortley phase."""
    y = sph_harm_y(l, abs(m), theta, phi) * (-1) ** abs(m)
    if m > 0:
        return np.sqrt(2.0) * y.real
    if m < 0:
        return np.sqrt(2.0) * y.imag
    return y.real


def test_index_layout():
    degrees, orders = degrees_orders(4)
    assert n_coeffs(4) == 25 == degrees.size
    for l in range(5):
        for m in range(-l, l + 1):
            k = sh_index(l, m)
            assert (degrees[k], orders[k]) == (l, m)


@pytest.mark.parametrize("l,m", [(0, 0), (1, -1), (1, 0), (2, 1), (5, -3), (9, 9), (16, -16)])
def test_synthesis_matches_scipy(grid, l, m):
    c = np.zeros(grid.size)
    c[sh_index(l, m)] = 1.0
    th, ph = grid.node_coordinates()
    np.testing.assert_allclose(grid.synthesis(c), scipy_real_harmonic(l, m, th, ph), atol=1e-13)


def test_roundtrip(grid, rng):
    c = rng.normal(size=grid.size)
    assert np.abs(grid.analysis(grid.synthesis(c)) - c).max() < 1e-12


def test_batched_transforms(grid, rng):
    C = rng.normal(size=(3, grid.size))
    vals = grid.synthesis(C)
    assert vals.shape == (3,) + grid.shape
    np.testing.assert_allclose(vals[1], grid.synthesis(C[1]), atol=1e-14)


def test_quadrature_integrates_products(grid, rng):
    a = rng.normal(size=grid.size)
    b = rng.normal(size=grid.size)
    assert grid.integrate(grid.synthesis(a) * grid.synthesis(b)) == pytest.approx(a @ b, abs=1e-11)


def test_gradient_against_finite_differences(grid, rng):
    c = rng.normal(size=grid.size) / (1 + grid.degrees) ** 2
    th = np.array([0.4, 1.3, 2.5])
    ph = np.array([0.2, 3.0, 5.5])
    _, dth, dph = grid.evaluate(c, th, ph, derivatives=True)
    eps = 1e-6
    fd_th = (grid.evaluate(c, th + eps, ph) - grid.evaluate(c, th - eps, ph)) / (2 * eps)
    fd_ph = (grid.evaluate(c, th, ph + eps) - grid.evaluate(c, th, ph - eps)) / (2 * eps) / np.sin(th)
    np.testing.assert_allclose(dth, fd_th, atol=1e-7)
    np.testing.assert_allclose(dph, fd_ph, atol=1e-7)


def test_coordinate_laplacian_matches_eigenvalues(rng):
    g = SphereGrid(32)
    c = rng.normal(size=g.size) / (1 + g.degrees) ** 2
    direct = g.coordinate_laplacian(c)
    spectral = g.synthesis(g.laplacian(c))
    assert np.abs(direct - spectral).max() < 1e-10


def test_basis_values_match_evaluate(grid, rng):
    c = rng.normal(size=grid.size)
    th = rng.uniform(0.05, 3.0, 9)
    ph = rng.uniform(0, 2 * np.pi, 9)
    np.testing.assert_allclose(c @ grid.basis_values(th, ph), grid.evaluate(c, th, ph), atol=1e-13)


def test_even_mask(grid):
    mask = grid.degree_mask(True)
    assert np.all(grid.degrees[mask] % 2 == 0)
    assert grid.degree_mask(False).all()


def test_rejects_coarse_grid():
    with pytest.raises(ValueError):
        SphereGrid(16, nlat=10)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=20), st.integers(min_value=0, max_value=2**31 - 1))
def test_roundtrip_any_band_limit(N, seed):
    g = SphereGrid(N)
    c = np.random.default_rng(seed).normal(size=g.size)
    assert np.abs(g.analysis(g.synthesis(c)) - c).max() < 1e-11
