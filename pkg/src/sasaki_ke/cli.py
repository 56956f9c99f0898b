"""
Command-line front end.

Subcommands ``model``, ``solve``, ``functionals``, ``estimates``,
``spectrum``, ``verify`` and ``report`` each write a JSON summary (with a
schema tag, the seed and a provenance block) plus CSV detail files.
Wall-clock data lives in a ``.meta.json`` sidecar so that summaries are
byte-identical for identical inputs.

Exit status: 0 on success, 1 when a check fails or a solver diverges, 2 on
configuration errors.

Environment
-----------
SASAKI_KE_OUTPUT_DIR
    Directory against which relative output paths are resolved.
SASAKI_KE_WORKERS
    Worker threads for per-node loops (default 1).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy
import yaml

from . import __version__
from .errors import AmbiguousSpectrumError, ConfigError, SasakiError
from .estimates import apriori_report
from .functionals import verify_functional_identities
from .ma_solver import ContinuityFamily, SolverOptions, continuity_solve, residual, uniqueness_experiment
from .model import ModelConfig, build_model, compute_h, metric_state, volume_invariance
from .spectral import basic_spectrum, hamiltonian_detector

log = logging.getLogger("sasaki_ke")

OUTPUT_DIR_ENV = "SASAKI_KE_OUTPUT_DIR"
WORKERS_ENV = "SASAKI_KE_WORKERS"

#: Check names in the order ``report`` prints them.
CHECK_ORDER = (
    "volume invariance",
    "L/M functionals",
    "I/J chain",
    "spectrum bound",
    "M monotonicity",
    "Green bound",
    "rescaled family",
    "oscillation",
    "C0 chain",
    "uniqueness",
)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


_SOLVER_KEYS = {
    "tol", "max_iter", "dt_initial", "dt_min", "dt_max", "shrink", "grow", "fast_iterations",
    "project_near_kernel", "near_kernel_tol", "singular_tol", "t_final", "checkpoints", "schedule",
    "predictor", "dense_limit",
}

_SECTIONS: dict[str, dict[str, Any]] = {
    "functionals": {"samples": 100, "tol": 1e-7, "chain_tol": 1e-9},
    "estimates": {"diameter_samples": 6000, "diameter_neighbours": 24, "green_sample_band": 24, "rescaled": True},
    "spectrum": {"count": 12, "even_only": None, "threshold": 1e-4, "gap": 1e-3},
    "uniqueness": {"seeds": [1, 2], "tau": 0.7},
    "verify": {
        "volume_samples": 200,
        "functional_samples": 20,
        "curvature_tol": 1e-5,
        "fixed_point_tol": 1e-12,
        "uniqueness": False,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Parsed experiment file.

    The YAML document has the sections ``model``, ``solver``,
    ``functionals``, ``estimates``, ``spectrum``, ``uniqueness``, ``verify``
    and an optional top-level ``seed``.  Unknown keys at any level are
    rejected.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    solver: dict = field(default_factory=dict)
    sections: dict = field(default_factory=lambda: {k: dict(v) for k, v in _SECTIONS.items()})
    seed: int = 0

    @classmethod
    def from_mapping(cls, data: dict | None) -> "ExperimentConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of sections")
        allowed = {"model", "solver", "seed"} | set(_SECTIONS)
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        model = ModelConfig.from_mapping(data.get("model") or {})
        solver = dict(data.get("solver") or {})
        bad = set(solver) - _SOLVER_KEYS
        if bad:
            raise ConfigError(f"unknown solver keys: {sorted(bad)}")
        for key in ("checkpoints", "schedule"):
            if solver.get(key) is not None:
                solver[key] = tuple(float(x) for x in solver[key])
        try:
            SolverOptions(**solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver options: {exc}") from exc
        sections = {}
        for name, defaults in _SECTIONS.items():
            given = data.get(name) or {}
            if not isinstance(given, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            bad = set(given) - set(defaults)
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            sections[name] = {**defaults, **given}
        try:
            seed = int(data.get("seed", model.seed))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"seed must be an integer: {exc}") from exc
        return cls(model=model, solver=solver, sections=sections, seed=seed)

    def solver_options(self, **overrides) -> SolverOptions:
        try:
            return SolverOptions(**{**self.solver, **overrides})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver options: {exc}") from exc

    def to_dict(self) -> dict:
        solver = {k: list(v) if isinstance(v, tuple) else v for k, v in self.solver.items()}
        return {"model": self.model.to_dict(), "solver": solver, **self.sections, "seed": self.seed}


def load_experiment(path: str | None) -> ExperimentConfig:
    """Read and validate an experiment file (defaults when ``path`` is None)."""
    if path is None:
        return ExperimentConfig.from_mapping({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration {path} is not valid YAML: {exc}") from exc
    return ExperimentConfig.from_mapping(data)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc


def resolve_output(path: str | None, default: str) -> Path:
    """Resolve an output path against ``SASAKI_KE_OUTPUT_DIR`` when relative."""
    p = Path(path or default)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _provenance(operation: str, module: str, config: dict | None) -> dict:
    return {"package": "sasaki-ke", "version": __version__, "module": module, "operation": operation, "config": config}


def write_outputs(out: Path, summary: dict, argv: Sequence[str], started: float, rows: list[dict] | None = None) -> None:
    """Write the JSON summary, its ``.meta.json`` sidecar and an optional CSV."""
    out.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    meta = {
        "summary": out.name,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "runtime_seconds": time.perf_counter() - started,
        "argv": list(argv),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    if rows:
        keys: list[str] = []
        for r in rows:
            keys.extend(k for k in r if k not in keys)
        with open(out.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for r in rows:
                writer.writerow(_jsonable(r))


def _status(name: str, passed: bool | None, detail: str = "") -> str:
    tag = "MISSING" if passed is None else ("PASS" if passed else "FAIL")
    return f"[{tag:7s}] {name}" + (f": {detail}" if detail else "")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _model_summary(cfg: ExperimentConfig, volume_samples: int) -> tuple[dict, dict]:
    model = build_model(cfg.model)
    _, diag = compute_h(model, diagnostics=True)
    vol = volume_invariance(model, n_samples=volume_samples, seed=cfg.seed)
    h_ok = diag.poisson_gap < 1e-8 and diag.normalization_residual < 1e-10
    if model.is_canonical:
        h_ok = h_ok and model.h.max_abs() < 1e-8
    checks = {
        "volume invariance": {"passed": vol.passed, "max_error": vol.max_error, "samples": volume_samples},
        "Ricci potential": {"passed": bool(h_ok), **dataclasses.asdict(diag), "max_abs_h": model.h.max_abs()},
    }
    summary = {
        "schema": "sasaki-ke/model/1",
        "seed": cfg.seed,
        "volume": model.volume,
        "quadrature_error": model.quadrature_error,
        "min_background_density": float(model.background_density.min()),
        "is_canonical": model.is_canonical,
        "active_coefficients": int(np.count_nonzero(model.active_mask)),
        "checks": checks,
    }
    return summary, checks


def cmd_model(args, cfg: ExperimentConfig, argv, started) -> int:
    n = args.volume_samples if args.volume_samples is not None else cfg.sections["verify"]["volume_samples"]
    summary, checks = _model_summary(cfg, n)
    summary["provenance"] = _provenance("build_model", "model", cfg.to_dict())
    write_outputs(resolve_output(args.out, "model.json"), summary, argv, started)
    for name, c in checks.items():
        print(_status(name, c["passed"]))
    return 0 if all(c["passed"] for c in checks.values()) else 1


def _curvature_residual(family: ContinuityFamily) -> float | None:
    try:
        state = family.state_at(1.0, 1e-12)
    except KeyError:
        return None
    m = family.model.m
    return float(np.abs(state.scalar_curvature - (2 * m + 2) * m).max())


def cmd_solve(args, cfg: ExperimentConfig, argv, started) -> int:
    model = build_model(cfg.model)
    overrides = {}
    if args.t_final is not None:
        overrides["t_final"] = args.t_final
    opts = cfg.solver_options(**overrides)
    family = continuity_solve(model, args.eqn, opts)
    curv = _curvature_residual(family)
    reached = abs(family.reached - opts.t_final) < 1e-12 and not family.stop_reason
    curvature_ok = curv is None or curv < cfg.sections["verify"]["curvature_tol"]
    summary = family.to_dict()
    summary.update(
        seed=cfg.seed,
        reached_t_final=reached,
        final_curvature_residual=curv,
        provenance=_provenance("continuity_solve", "ma_solver", cfg.to_dict()),
    )
    ok = reached and curvature_ok
    if args.uniqueness:
        sec = cfg.sections["uniqueness"]
        rep = uniqueness_experiment(model, args.eqn, seeds=tuple(sec["seeds"]), options=opts, tau=sec["tau"])
        u = rep.to_dict()
        u_ok = (
            not rep.failures
            and rep.max_distance < 1e-7
            and (rep.backward_tau is None or (rep.backward_t0_distance or 0.0) < 1e-7 and abs(rep.backward_l_zero or 0.0) < 1e-8)
        )
        u["passed"] = bool(u_ok)
        summary["uniqueness"] = u
        ok = ok and u_ok
        print(_status("uniqueness", u_ok, f"max distance {rep.max_distance:.2e}"))
    write_outputs(resolve_output(args.out, "family.json"), summary, argv, started, family.csv_rows())
    detail = f"reached t={family.reached:.6g}" + (f", curvature residual {curv:.2e}" if curv is not None else "")
    if family.stop_reason:
        detail += f" ({family.stop_reason})"
    print(_status("continuity solve", reached and curvature_ok, detail))
    return 0 if ok else 1


def _functional_checks(report) -> dict:
    worst = report.worst()
    chain = {k: v for k, v in worst.items() if k.startswith("chain")}
    ident = {k: v for k, v in worst.items() if not k.startswith("chain")}
    return {
        "L/M functionals": {
            "passed": all(v["passed"] for v in ident.values()),
            "max_residual": max((v["worst"] for v in ident.values()), default=0.0),
        },
        "I/J chain": {
            "passed": all(v["passed"] for v in chain.values()),
            "min_margin": min((v["worst"] for v in chain.values()), default=0.0),
            "binding": report.chain_binding,
        },
    }


def cmd_functionals(args, cfg: ExperimentConfig, argv, started) -> int:
    model = build_model(cfg.model)
    sec = cfg.sections["functionals"]
    n = args.samples if args.samples is not None else sec["samples"]
    seed = args.seed if args.seed is not None else cfg.seed
    report = verify_functional_identities(model, n_samples=n, seed=seed, tol=sec["tol"], chain_tol=sec["chain_tol"])
    summary = report.to_dict()
    checks = _functional_checks(report)
    summary.update(checks=checks, provenance=_provenance("verify_functional_identities", "functionals", cfg.to_dict()))
    summary["seed"] = seed
    write_outputs(resolve_output(args.out, "functionals.json"), summary, argv, started, [r.to_dict() for r in report.records])
    for name, c in checks.items():
        print(_status(name, c["passed"]))
    return 0 if report.passed else 1


def _estimates(family: ContinuityFamily, cfg: ExperimentConfig, args=None) -> dict:
    sec = dict(cfg.sections["estimates"])
    if args is not None:
        if args.diameter_samples is not None:
            sec["diameter_samples"] = args.diameter_samples
        if args.diameter_neighbours is not None:
            sec["diameter_neighbours"] = args.diameter_neighbours
        if args.no_rescaled:
            sec["rescaled"] = False
    report = apriori_report(
        family,
        rescaled=sec["rescaled"],
        diameter_samples=sec["diameter_samples"],
        diameter_neighbours=sec["diameter_neighbours"],
        green_sample_band=sec["green_sample_band"],
        workers=_workers(),
    )
    return report


def cmd_estimates(args, cfg: ExperimentConfig, argv, started) -> int:
    try:
        data = json.loads(Path(args.family).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read family file {args.family}: {exc}") from exc
    if data.get("schema") != "sasaki-ke/family/1":
        raise ConfigError(f"{args.family} is not a family file (schema {data.get('schema')!r})")
    model_cfg = ModelConfig.from_mapping(data.get("model") or {})
    model = build_model(model_cfg)
    family = ContinuityFamily.from_dict(model, data)
    try:
        report = _estimates(family, cfg, args)
    except ValueError as exc:
        raise SasakiError(str(exc)) from exc
    summary = report.to_dict()
    summary.update(
        seed=data.get("seed", model_cfg.seed),
        provenance=_provenance("apriori_report", "estimates", {"family": str(args.family), **cfg.to_dict()}),
    )
    write_outputs(resolve_output(args.out, "report.json"), summary, argv, started, report.csv_rows())
    for name, c in report.checks.items():
        print(_status(name, c["passed"]))
    return 0 if report.passed else 1


def _spectrum(model, cfg: ExperimentConfig, count: int | None, even_only: bool | None) -> tuple[dict, dict]:
    sec = cfg.sections["spectrum"]
    count = count if count is not None else sec["count"]
    if even_only is None:
        even_only = sec["even_only"]
    spec = basic_spectrum(model, count=count, even_only=even_only)
    detector_error = None
    try:
        records = hamiltonian_detector(model, spectrum=spec, threshold=sec["threshold"], gap=sec["gap"], even_only=even_only)
    except AmbiguousSpectrumError as exc:
        records, detector_error = [], str(exc)
    kernel = sum(1 for lam in spec.eigenvalues if abs(lam - model.einstein_constant) < sec["threshold"])
    fields_ok = detector_error is None and len(records) == kernel and all(r.passed() for r in records)
    bound_ok = spec.lambda_1_bound_ok and spec.zero_multiplicity == 1 and spec.orthonormality_error < 1e-8
    summary = spec.to_dict()
    summary["hamiltonian_fields"] = [r.to_dict() for r in records]
    summary["detector_error"] = detector_error
    checks = {
        "spectrum bound": {"passed": bool(bound_ok), "lambda_1": spec.lambda_1, "margin": spec.lambda_1 - (spec.bound - 1e-6)},
        "Hamiltonian fields": {"passed": bool(fields_ok), "count": len(records), "kernel_dimension": kernel},
    }
    summary["checks"] = checks
    return summary, checks


def cmd_spectrum(args, cfg: ExperimentConfig, argv, started) -> int:
    model = build_model(cfg.model)
    even = {"even": True, "full": False, None: None}[args.space]
    summary, checks = _spectrum(model, cfg, args.count, even)
    summary.update(seed=cfg.seed, provenance=_provenance("basic_spectrum", "spectral", cfg.to_dict()))
    rows = [{"index": k, "eigenvalue": v} for k, v in enumerate(summary["eigenvalues"])]
    write_outputs(resolve_output(args.out, "spectrum.json"), summary, argv, started, rows)
    for name, c in checks.items():
        print(_status(name, c["passed"]))
    return 0 if all(c["passed"] for c in checks.values()) else 1


def cmd_verify(args, cfg: ExperimentConfig, argv, started) -> int:
    sec = cfg.sections["verify"]
    model = build_model(cfg.model)
    checks: dict[str, dict] = {}

    _, mchecks = _model_summary(cfg, sec["volume_samples"])
    checks.update(mchecks)

    freport = verify_functional_identities(
        model, n_samples=sec["functional_samples"], seed=cfg.seed,
        tol=cfg.sections["functionals"]["tol"], chain_tol=cfg.sections["functionals"]["chain_tol"],
    )
    checks.update(_functional_checks(freport))

    if model.is_canonical:
        zero = metric_state(model)
        worst = max(
            float(np.abs(residual(zero, t, eqn).values).max()) for t in np.linspace(0.0, 1.0, 11) for eqn in ("s1", "s2")
        )
        checks["canonical fixed point"] = {"passed": worst < sec["fixed_point_tol"], "max_residual": worst}

    _, schecks = _spectrum(model, cfg, None, None)
    checks.update(schecks)

    opts = cfg.solver_options()
    family = continuity_solve(model, "s2", opts)
    curv = _curvature_residual(family)
    reached = abs(family.reached - opts.t_final) < 1e-12 and not family.stop_reason
    solve_ok = reached and (curv is None or curv < sec["curvature_tol"])
    if model.is_canonical:
        solve_ok = solve_ok and sum(family.iterations) == 0
    checks["continuity solve"] = {
        "passed": bool(solve_ok), "reached": family.reached, "curvature_residual": curv,
        "corrections": int(sum(family.iterations)), "stop_reason": family.stop_reason,
    }
    if len(family) >= 5:
        report = _estimates(family, cfg)
        checks.update(report.checks)
    else:
        checks["M monotonicity"] = {"passed": False, "reason": f"family has only {len(family)} nodes"}

    if sec["uniqueness"]:
        u = cfg.sections["uniqueness"]
        rep = uniqueness_experiment(model, "s2", seeds=tuple(u["seeds"]), options=opts, tau=u["tau"])
        ok = not rep.failures and rep.max_distance < 1e-7 and (rep.backward_t0_distance or 0.0) < 1e-7
        checks["uniqueness"] = {"passed": bool(ok), **rep.to_dict()}

    summary = {
        "schema": "sasaki-ke/verify/1",
        "seed": cfg.seed,
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
        "provenance": _provenance("verify", "cli", cfg.to_dict()),
    }
    write_outputs(resolve_output(args.out, "verify.json"), summary, argv, started)
    for name, c in checks.items():
        print(_status(name, c["passed"]))
    return 0 if summary["passed"] else 1


def collect_checks(documents: Sequence[dict]) -> dict[str, dict]:
    """Merge named checks from prior summaries (later inputs override earlier ones)."""
    merged: dict[str, dict] = {}
    for doc in documents:
        schema = doc.get("schema", "")
        for name, c in (doc.get("checks") or {}).items():
            merged[name] = {**c, "source": schema}
        if "uniqueness" in doc and isinstance(doc["uniqueness"], dict):
            merged["uniqueness"] = {**doc["uniqueness"], "source": schema}
        if schema == "sasaki-ke/functionals/1" and "checks" not in doc:
            merged["L/M functionals"] = {"passed": doc.get("passed"), "source": schema}
    return merged


def cmd_report(args, cfg, argv, started) -> int:
    docs = []
    for path in args.inputs:
        try:
            docs.append(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read input {path}: {exc}") from exc
    merged = collect_checks(docs)
    names = list(CHECK_ORDER) + sorted(set(merged) - set(CHECK_ORDER))
    lines = []
    for name in names:
        c = merged.get(name)
        passed = None if c is None else bool(c.get("passed"))
        margin = None if c is None else c.get("margin")
        detail = "" if c is None else (f"margin {margin:.3e}" if isinstance(margin, (int, float)) else "")
        lines.append(_status(name, passed, detail))
    print("\n".join(lines))
    failed = [n for n, c in merged.items() if not c.get("passed")]
    summary = {
        "schema": "sasaki-ke/report/1",
        "seed": next((d.get("seed") for d in docs if d.get("seed") is not None), None),
        "inputs": [str(p) for p in args.inputs],
        "checks": merged,
        "lines": lines,
        "passed": not failed,
        "provenance": _provenance("report", "cli", None),
    }
    if args.out:
        write_outputs(resolve_output(args.out, "summary.json"), summary, argv, started)
    return 0 if not failed else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sasaki-ke",
        description="Continuity-method laboratory for transverse Kahler-Einstein metrics on the Hopf fibration.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_out):
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--out", default=None, help=f"JSON summary path (default {default_out})")

    p = sub.add_parser("model", help="build a model and check its basic invariants")
    common(p, "model.json")
    p.add_argument("--volume-samples", type=int, default=None)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("solve", help="follow the continuity path")
    common(p, "family.json")
    p.add_argument("--eqn", choices=("s1", "s2"), default="s2")
    p.add_argument("--t-final", type=float, default=None)
    p.add_argument("--uniqueness", action="store_true", help="also run the multi-seed uniqueness experiment")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("functionals", help="check the functional identities on random potentials")
    common(p, "functionals.json")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_functionals)

    p = sub.add_parser("estimates", help="a priori estimate chain over a solved family")
    common(p, "report.json")
    p.add_argument("--family", required=True, help="family JSON written by 'solve'")
    p.add_argument("--diameter-samples", type=int, default=None, help="total-space sample count for the diameter graph")
    p.add_argument("--diameter-neighbours", type=int, default=None, help="neighbours per sample in the diameter graph")
    p.add_argument("--no-rescaled", action="store_true", help="skip rescaled-metric and diameter checks")
    p.set_defaults(func=cmd_estimates)

    p = sub.add_parser("spectrum", help="weighted Laplacian spectrum and Hamiltonian fields")
    common(p, "spectrum.json")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--space", choices=("even", "full"), default=None, help="override the model's symmetry mode")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("verify", help="run the invariant suite across modules")
    common(p, "verify.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="merge prior outputs into one status line per check")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def _error(kind: str, message: str, status: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_status": status}), file=sys.stderr)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        cfg = load_experiment(getattr(args, "config", None)) if args.command != "report" else None
        return args.func(args, cfg, argv, started)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), 2)
    except SasakiError as exc:
        return _error(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
