import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasaki_ke.errors import ConfigError, ModelError, NonPositiveStateError, PositivityError
from sasaki_ke.model import (
    BasicFunction,
    ModelConfig,
    build_model,
    complex_laplacian,
    compute_h,
    de_rham_laplacian,
    eta_einstein_map,
    load_config,
    metric_state,
    random_potential,
    sasaki_ricci_bound,
    transverse_scalar_curvature,
    volume,
    volume_invariance,
)


def test_canonical_constants(canonical):
    assert canonical.volume == pytest.approx(2 * math.pi**2, rel=1e-14)
    assert canonical.einstein_constant == 4
    assert canonical.is_canonical
    assert canonical.quadrature_error < 1e-12
    assert canonical.h.max_abs() < 1e-12


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_mapping({"band_limit": 16, "resolution": 3})


@pytest.mark.parametrize(
    "data",
    [
        {"band_limit": 4},
        {"symmetry_mode": "odd"},
        {"fiber_length": -1.0},
        {"perturbation": [[2, 3, 0.1]]},
        {"perturbation": [[2, 0]]},
        {"band_limit": "many"},
    ],
)
def test_config_validation(data):
    with pytest.raises(ConfigError):
        ModelConfig.from_mapping(data)


def test_load_config_yaml(tmp_path):
    p = tmp_path / "m.cfg"
    p.write_text("band_limit: 12\nsymmetry_mode: even\nperturbation:\n  - [2, 0, 0.05]\n")
    cfg = load_config(p)
    assert cfg.band_limit == 12 and cfg.perturbation == ((2, 0, 0.05),)
    assert ModelConfig.from_mapping(cfg.to_dict()) == cfg


def test_odd_perturbation_in_even_mode():
    with pytest.raises(ModelError):
        build_model(band_limit=12, symmetry_mode="even", perturbation=((1, 0, 0.01),))


def test_nonpositive_background():
    with pytest.raises(PositivityError) as info:
        build_model(band_limit=12, perturbation=((2, 0, 0.5),))
    assert info.value.min_value <= 0


def test_even_function_rejects_odd_coefficients(canonical_small):
    c = np.zeros(canonical_small.grid.size)
    c[1] = 1.0
    with pytest.raises(ModelError):
        BasicFunction.from_coeffs(canonical_small.grid, c, even_only=True)


def test_basic_function_arithmetic(canonical_small, rng):
    g = canonical_small.grid
    a = canonical_small.function_from_coeffs(rng.normal(size=g.size))
    b = canonical_small.function_from_coeffs(rng.normal(size=g.size))
    np.testing.assert_allclose((2.0 * a - b).coeffs, 2 * a.coeffs - b.coeffs, atol=1e-12)
    assert a.roundtrip_error() < 1e-12
    assert a.oscillation() == pytest.approx(a.values.max() - a.values.min())


def test_h_diagnostics_on_perturbed_model(perturbed_even):
    _, diag = compute_h(perturbed_even, diagnostics=True)
    assert diag.poisson_gap < 1e-10
    assert diag.ddbar_residual < 1e-8
    assert diag.normalization_residual < 1e-12


def test_h_normalisation(perturbed_even):
    s = metric_state(perturbed_even)
    integral = np.sum((np.exp(perturbed_even.h.values) - 1.0) * s.measure)
    assert abs(integral) < 1e-12


def test_laplacian_identity(perturbed_full, rng):
    """On basic functions the Riemannian Laplacian equals twice the complex one."""
    model = perturbed_full
    u = random_potential(model, rng)
    state = metric_state(model, u)
    f = model.function_from_coeffs(rng.normal(size=model.grid.size) / (1 + model.grid.degrees) ** 3)
    lhs = de_rham_laplacian(state, f).values
    rhs = 2.0 * complex_laplacian(state, f).values
    assert np.abs(lhs - rhs).max() < 1e-8 * max(1.0, np.abs(rhs).max())


def _brioschi_curvature(model, state, theta):
    """Gaussian curvature of (rho/4)(dtheta^2 + sin^2 dphi^2) for axisymmetric rho."""
    g = model.grid
    eps = 1e-4

    def rho(th):
        return g.evaluate(state.density_coeffs, th, np.zeros_like(th))

    def sqrtG(th):
        return np.sqrt(rho(th) / 4.0) * np.sin(th)

    def inner(th):
        d = (sqrtG(th + eps) - sqrtG(th - eps)) / (2 * eps)
        return d / np.sqrt(rho(th) / 4.0)

    outer = (inner(theta + eps) - inner(theta - eps)) / (2 * eps)
    return -outer / (sqrtG(theta) * np.sqrt(rho(theta) / 4.0))


def test_scalar_curvature_brioschi_oracle():
    model = build_model(band_limit=24, perturbation=((2, 0, 0.05), (4, 0, -0.02)))
    u = model.harmonic(2, 0, 0.03) + model.harmonic(6, 0, 0.001)
    state = metric_state(model, u)
    assert state.min_ratio > 0.5
    rows = slice(2, -2)
    theta = model.grid.theta[rows]
    exact = _brioschi_curvature(model, state, theta)
    approx = transverse_scalar_curvature(state).values[rows, 0]
    np.testing.assert_allclose(approx, exact, atol=1e-5)


def test_canonical_curvature(canonical):
    assert np.abs(metric_state(canonical).scalar_curvature - 4.0).max() < 1e-12


def test_eta_einstein_map():
    c = eta_einstein_map(4.0, 1)
    assert (c.lambda_, c.nu) == (2.0, 0.0)
    assert c.is_sasaki_einstein
    c = eta_einstein_map(1.0, 2)
    assert (c.lambda_, c.nu) == (-1.0, 5.0)


def test_sasaki_ricci_bound_canonical(canonical):
    s = metric_state(canonical)
    assert sasaki_ricci_bound(s, 1.0) == pytest.approx(2.0)
    assert sasaki_ricci_bound(s, 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        sasaki_ricci_bound(s, 0.0)
    with pytest.raises(ValueError):
        sasaki_ricci_bound(s, 1.5)


def test_nonpositive_state_flagged(canonical_small):
    u = canonical_small.harmonic(1, 0, 1.0)
    s = metric_state(canonical_small, u)
    assert not s.positive
    with pytest.raises(NonPositiveStateError):
        s.require_positive()


def test_volume_invariance_small_sample(perturbed_full):
    res = volume_invariance(perturbed_full, n_samples=20, seed=3)
    assert res.passed and res.max_error < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(min_value=0.0, max_value=0.5))
def test_random_potential_is_admissible(seed, margin):
    model = build_model(band_limit=12, perturbation=((2, 0, 0.05),))
    u = random_potential(model, np.random.default_rng(seed), margin=margin)
    state = metric_state(model, u)
    assert state.min_ratio >= margin - 1e-12
    assert abs(volume(state) - model.volume) < 1e-10 * model.volume


def test_random_potential_respects_symmetry(perturbed_even, rng):
    u = random_potential(perturbed_even, rng)
    assert u.odd_coefficient_norm() < 1e-14
