import json

import numpy as np
import pytest

from sasaki_ke.errors import AmbiguousSpectrumError
from sasaki_ke.model import build_model, metric_state, random_potential
from sasaki_ke.spectral import (
    basic_spectrum,
    hamiltonian_detector,
    multiplicity_table,
    weighted_laplacian,
)


@pytest.fixture(scope="module")
def canonical_spectrum(canonical):
    return basic_spectrum(canonical, count=9)


@pytest.fixture(scope="module")
def resolved_full():
    # the pointwise eigen-residual of Galerkin eigenvectors reaches 1e-8 only from N ~ 32
    return build_model(band_limit=32, perturbation=((2, 0, 0.05), (3, 1, 0.01)))


def test_canonical_full_spectrum(canonical_spectrum):
    expected = np.array([0.0] + [4.0] * 3 + [12.0] * 5)
    np.testing.assert_allclose(canonical_spectrum.eigenvalues, expected, atol=1e-8)
    assert [k for _, k in canonical_spectrum.multiplicities] == [1, 3, 5]
    assert canonical_spectrum.lambda_1_bound_ok
    assert canonical_spectrum.orthonormality_error < 1e-12


def test_canonical_even_spectrum(canonical):
    spec = basic_spectrum(canonical, count=6, even_only=True)
    np.testing.assert_allclose(spec.eigenvalues, [0.0] + [12.0] * 5, atol=1e-8)
    assert spec.even_only


def test_eigenvectors_are_weighted_orthonormal(resolved_full):
    spec = basic_spectrum(resolved_full, count=6)
    assert spec.orthonormality_error < 1e-10
    assert spec.zero_multiplicity == 1
    assert spec.lambda_1 >= 4.0 - 1e-6


def test_weighted_laplacian_is_symmetric(resolved_full, rng):
    """<box_h f, g>_h = <f, box_h g>_h for the weight e^h dmu."""
    model = resolved_full
    state = metric_state(model, random_potential(model, rng))
    h = state.ricci_potential
    w = np.exp(h.values) * state.measure
    band = model.grid.degrees <= 6
    f = rng.normal(size=model.grid.size) * band
    g = rng.normal(size=model.grid.size) * band
    fv, gv = model.grid.synthesis(f), model.grid.synthesis(g)
    lhs = np.sum(weighted_laplacian(state, h, f).real * gv * w)
    rhs = np.sum(fv * weighted_laplacian(state, h, g).real * w)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_multiplicity_table_groups_clusters():
    assert multiplicity_table(np.array([0.0, 4.0, 4.0 + 1e-9, 4.0, 12.0])) == [(0.0, 1), (pytest.approx(4.0), 3), (12.0, 1)]
    assert multiplicity_table(np.array([])) == []


def test_detector_on_canonical_full(canonical, canonical_spectrum):
    records = hamiltonian_detector(canonical, spectrum=canonical_spectrum)
    assert len(records) == 3
    for r in records:
        assert r.passed(1e-6)
        assert r.eigenvalue == pytest.approx(4.0, abs=1e-8)
        assert r.is_real
    d = json.loads(json.dumps(records[0].to_dict()))
    assert set(d) >= {"eigenvalue", "hamiltonian_identity_residual", "u_X_real", "field_coefficients"}


def test_detector_empty_on_even_subspace(canonical, perturbed_even):
    assert hamiltonian_detector(canonical, count=6, even_only=True) == []
    assert hamiltonian_detector(perturbed_even, count=6) == []


def test_detector_on_perturbed_full_model(resolved_full):
    """Every metric on the sphere carries the three rotation fields, perturbed or not."""
    records = hamiltonian_detector(resolved_full, count=6)
    assert len(records) == 3
    assert all(r.passed(1e-6) for r in records)


def test_detector_flags_ambiguous_cluster(canonical, canonical_spectrum):
    # a gap wider than 8 puts the degree-2 cluster at 12 inside the ambiguous band
    with pytest.raises(AmbiguousSpectrumError):
        hamiltonian_detector(canonical, spectrum=canonical_spectrum, gap=9.0)


def test_spectrum_serialises(canonical_spectrum):
    d = json.loads(json.dumps(canonical_spectrum.to_dict(include_vectors=False)))
    assert d["schema"] == "sasaki-ke/spectrum/1"
    assert d["zero_multiplicity"] == 1 and d["lambda_1_bound_ok"]
    assert "eigenvectors_real" not in d
