"""Acceptance criteria 1-10, each at its stated tolerance and time budget."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, PERTURBED_EVEN
from sasaki_ke.estimates import (
    apriori_report,
    estimate_diameter,
    monotonicity_refinement,
    refine_family,
    rescaled_family_check,
)
from sasaki_ke.functionals import verify_functional_identities
from sasaki_ke.ma_solver import (
    SolverOptions,
    continuity_solve,
    linearized_apply,
    linearized_solve,
    residual,
    s1_from_s2,
    uniqueness_experiment,
)
from sasaki_ke.model import build_model, metric_state, random_potential, volume_invariance
from sasaki_ke.spectral import basic_spectrum, hamiltonian_detector

TEN_T = tuple(round(0.1 * k, 10) for k in range(1, 11))


def record(k, ok, detail):
    ACCEPTANCE_RESULTS[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def perturbed_report(perturbed_family):
    return apriori_report(perturbed_family, rescaled=False)


def test_criterion_01_volume_invariance():
    model = build_model(band_limit=32, perturbation=((2, 0, 0.05), (3, 1, 0.01)))
    start = time.perf_counter()
    res = volume_invariance(model, n_samples=200, seed=0)
    elapsed = time.perf_counter() - start
    ok = len(res.errors) == 200 and res.max_error < 1e-8 and elapsed < 30
    record(1, ok, f"max rel error {res.max_error:.2e} over 200 potentials in {elapsed:.1f}s")


def test_criterion_02_functional_identities(perturbed_even):
    start = time.perf_counter()
    report = verify_functional_identities(perturbed_even, n_samples=100, seed=0, tol=1e-7, chain_tol=1e-9)
    elapsed = time.perf_counter() - start
    worst = report.worst()
    residuals = max((w["worst"] for name, w in worst.items() if not name.startswith("chain")), default=0.0)
    margin = min((w["worst"] for name, w in worst.items() if name.startswith("chain")), default=0.0)
    pairs = len(report.values)
    ok = report.passed and pairs == 100 and residuals < 1e-7 and margin >= -1e-9 and elapsed < 120
    record(2, ok, f"{pairs} pairs, max residual {residuals:.2e}, chain margin {margin:.2e}, {elapsed:.1f}s")


def test_criterion_03_canonical_fixed_point(canonical):
    h_max = canonical.h.max_abs()
    state = metric_state(canonical)
    res = max(
        float(np.abs(residual(state, t, eqn).values).max()) for t in np.linspace(0.0, 1.0, 11) for eqn in ("s1", "s2")
    )
    fam = continuity_solve(canonical, "s2")
    corrections = sum(fam.iterations)
    ok = h_max < 1e-8 and res < 1e-12 and corrections == 0 and fam.reached == pytest.approx(1.0)
    record(3, ok, f"|h| {h_max:.1e}, residual at u=0 {res:.1e}, Newton corrections {corrections}")


def test_criterion_04_perturbed_even_reaches_one(perturbed_even):
    start = time.perf_counter()
    fam = continuity_solve(perturbed_even, "s2")
    elapsed = time.perf_counter() - start
    reached = fam.reached
    dev = float(np.abs(fam.state_at(1.0).scalar_curvature - 4.0).max()) if reached == 1.0 else math.inf
    ok = not fam.stop_reason and dev < 1e-5 and elapsed < 300
    record(4, ok, f"reached t={reached}, |s^T - 4| {dev:.2e}, {elapsed:.1f}s")


def test_criterion_05_uniqueness(perturbed_even):
    rep = uniqueness_experiment(perturbed_even, "s2", seeds=(1, 2), tau=0.7)
    back = rep.backward_t0_distance
    l0 = rep.backward_l_zero
    ok = (
        not rep.failures
        and rep.max_distance < 1e-7
        and back is not None
        and back < 1e-7
        and abs(l0) < 1e-8
    )
    record(5, ok, f"seed distance {rep.max_distance:.1e}, backward distance {back:.1e}, L(0,u0) {l0:.1e}")


def test_criterion_06_monotonicity(perturbed_report, perturbed_even):
    interior = perturbed_report.records[1:-1]
    worst_dM = max(r.dM_dt for r in interior)
    study = monotonicity_refinement(perturbed_even, "s2", dt=0.1)
    ok = worst_dM <= 1e-8 and study.monotone and 1.8 <= study.order <= 2.2
    record(
        6,
        ok,
        f"max dM/dt {worst_dM:.2e}, identity error {study.errors_coarse.max():.1e} -> "
        f"{study.errors_fine.max():.1e} (order {study.order:.2f})",
    )


def test_criterion_07_rescaled_family(perturbed_even, canonical):
    fam = continuity_solve(perturbed_even, "s2", SolverOptions(checkpoints=TEN_T))
    vol_err, ric, diam = 0.0, math.inf, 0.0
    for t in TEN_T:
        res = rescaled_family_check(fam.state_at(t, 1e-12), t)
        vol_err = max(vol_err, res.volume_error)
        ric = min(ric, res.ricci_bound)
        diam = max(diam, res.diameter.value)
    d_can = estimate_diameter(metric_state(canonical), 1.0).value
    ok = vol_err < 1e-10 and ric >= 2 - 1e-6 and diam <= 1.05 * math.pi and abs(d_can - math.pi) < 0.05 * math.pi
    record(
        7,
        ok,
        f"volume error {vol_err:.1e}, Ricci bound {ric:.9f}, max diameter {diam / math.pi:.4f} pi, "
        f"canonical {d_can / math.pi:.4f} pi",
    )


def test_criterion_08_green_and_oscillation(perturbed_family, perturbed_report):
    repro = perturbed_report.green["reproduction_error"]
    osc_ok = perturbed_report.checks["oscillation"]["passed"]
    fine = apriori_report(refine_family(perturbed_family, factor=2), rescaled=False)
    drift = abs(fine.C - perturbed_report.C) / perturbed_report.C
    ok = repro < 1e-8 and osc_ok and fine.checks["oscillation"]["passed"] and drift < 0.1
    record(
        8,
        ok,
        f"Green reproduction {repro:.1e}, C {perturbed_report.C:.6f} -> {fine.C:.6f} ({100 * drift:.2f}% under N->2N)",
    )


def test_criterion_09_spectrum(canonical):
    spec = basic_spectrum(canonical, count=9)
    expected = np.array([0.0] + [4.0] * 3 + [12.0] * 5)
    err = float(np.abs(spec.eigenvalues - expected).max())
    even_records = hamiltonian_detector(canonical, count=6, even_only=True)
    full_records = hamiltonian_detector(canonical, spectrum=spec)
    ok = (
        err < 1e-8
        and spec.lambda_1 >= 4 - 1e-6
        and even_records == []
        and len(full_records) == 3
        and all(r.passed(1e-6) for r in full_records)
    )
    ident = max(r.hamiltonian_identity_residual for r in full_records) if full_records else math.nan
    record(
        9,
        ok,
        f"spectrum error {err:.1e}, even fields {len(even_records)}, full fields {len(full_records)} "
        f"(identity residual {ident:.1e})",
    )


def test_criterion_10_linearization(perturbed_even, perturbed_family):
    model = perturbed_even
    rng = np.random.default_rng(10)
    eps = (1e-3, 1e-4, 1e-5, 1e-6)
    slopes = []
    for t in (0.0, 0.5, 1.0):
        state = metric_state(model, random_potential(model, rng))
        delta = random_potential(model, rng)
        base = residual(state, t, "s2").values
        lin = linearized_apply(state, t, "s2", delta).values
        errs = [
            np.abs((residual(metric_state(model, state.u.coeffs + e * delta.coeffs), t, "s2").values - base) / e - lin).max()
            for e in eps
        ]
        slopes.append(np.polyfit(np.log(eps), np.log(errs), 1)[0])

    s1_even = s1_from_s2(perturbed_family.state_at(1.0), 1.0)
    rhs = model.constant(1.0)
    sigma_even = linearized_solve(s1_even, 1.0, "s1", rhs).smallest_singular_value
    full = build_model(**{**PERTURBED_EVEN, "symmetry_mode": "full"})
    s1_full = metric_state(full, s1_even.u.coeffs)
    sigma_full = linearized_solve(s1_full, 1.0, "s1", full.constant(1.0), project=True).smallest_singular_value
    ok = min(slopes) >= 0.9 and sigma_full < 1e-6 and sigma_even >= 1.0
    record(
        10,
        ok,
        f"FD slope min {min(slopes):.3f}, sigma_min full {sigma_full:.1e}, even {sigma_even:.3f}",
    )
