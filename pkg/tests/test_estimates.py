import json
import math

import numpy as np
import pytest

from sasaki_ke.estimates import (
    apriori_report,
    estimate_diameter,
    green_lower_bound,
    monotonicity_refinement,
    rescaled_family_check,
)
from sasaki_ke.ma_solver import SolverOptions, continuity_solve
from sasaki_ke.model import build_model, metric_state, random_potential


@pytest.fixture(scope="module")
def canonical_green(canonical):
    return green_lower_bound(metric_state(canonical))


@pytest.fixture(scope="module")
def perturbed_report(perturbed_family):
    return apriori_report(perturbed_family, rescaled=False)


def test_green_kernel_inverts_first_harmonic(canonical, canonical_green):
    _, kernel = canonical_green
    y10 = canonical.harmonic(1, 0, 1.0)
    assert np.abs(kernel.apply(y10).values - y10.values / 4).max() < 1e-12


def test_green_kernel_diagnostics(canonical_green):
    K, kernel = canonical_green
    assert K == pytest.approx(kernel.K) and K > 0
    assert kernel.K_box == pytest.approx(2 * K)
    assert kernel.symmetry_error < 1e-12
    assert kernel.row_mean_error < 1e-12
    assert json.loads(json.dumps(kernel.to_dict()))["first_eigenvalue"] == pytest.approx(4.0)


def test_green_kernel_reproduces_functions(perturbed_full, rng):
    model = perturbed_full
    state = metric_state(model, random_potential(model, rng))
    _, kernel = green_lower_bound(state)
    f = model.function_from_coeffs(rng.normal(size=model.grid.size) / (1 + model.grid.degrees) ** 2)
    assert kernel.reproduction_error(f) < 1e-8


def test_green_values_are_symmetric(perturbed_full, rng):
    _, kernel = green_lower_bound(metric_state(perturbed_full))
    th = rng.uniform(0.1, 3.0, 5)
    ph = rng.uniform(0, 2 * math.pi, 5)
    G = kernel.values(th, ph, th, ph)
    assert np.abs(G - G.T).max() < 1e-12


def test_rescaled_volume_at_half(canonical):
    res = rescaled_family_check(metric_state(canonical), 0.5, diameter=False)
    assert res.volume == pytest.approx(math.pi**2 / 2, rel=1e-12)
    assert res.myers_ok and res.diameter_ok
    with pytest.raises(ValueError):
        rescaled_family_check(metric_state(canonical), 0.0, diameter=False)


def test_canonical_diameter_near_pi(canonical):
    d = estimate_diameter(metric_state(canonical), 1.0)
    assert abs(d.value - math.pi) < 0.05 * math.pi


def test_rescaled_ricci_bound_on_perturbed_path(perturbed_family):
    k = int(np.argmin(np.abs(np.asarray(perturbed_family.ts) - 0.3)))
    t = perturbed_family.ts[k]
    res = rescaled_family_check(perturbed_family.states[k], t, diameter=False)
    assert res.ricci_bound >= 2 - 1e-6
    assert res.volume_error < 1e-10


def test_canonical_family_estimates_are_trivial(canonical_small):
    fam = continuity_solve(canonical_small, "s2", SolverOptions(schedule=(0.25, 0.5, 0.75, 1.0)))
    report = apriori_report(fam, rescaled=False)
    assert report.passed
    for r in report.records:
        assert r.osc == 0.0 and r.I == 0.0 and abs(r.M) < 1e-14


def test_sparse_family_rejected(canonical_small):
    fam = continuity_solve(canonical_small, "s2", SolverOptions(schedule=(0.5, 1.0)))
    with pytest.raises(ValueError, match="at least 5"):
        apriori_report(fam, rescaled=False)


def test_perturbed_report_checks(perturbed_report):
    assert perturbed_report.passed, perturbed_report.checks
    assert set(perturbed_report.checks) == {"M monotonicity", "Green bound", "oscillation", "C0 chain"}
    assert all(r.sign_change for r in perturbed_report.records)
    interior = perturbed_report.records[1:-1]
    assert max(r.dM_dt for r in interior) <= 1e-8


def test_perturbed_report_serialises(perturbed_report):
    d = json.loads(json.dumps(perturbed_report.to_dict()))
    assert d["schema"] == "sasaki-ke/estimates/1" and d["passed"]
    rows = perturbed_report.csv_rows()
    assert len(rows) == len(perturbed_report.records)
    assert {"t", "osc", "x_theta", "oscillation_slack"} <= set(rows[1])


@pytest.mark.slow
def test_monotonicity_refinement_order():
    model = build_model(band_limit=24, symmetry_mode="even", perturbation=((2, 0, 0.05),))
    study = monotonicity_refinement(model, dt=0.2)
    assert study.monotone
    assert study.order == pytest.approx(2.0, abs=0.2)
