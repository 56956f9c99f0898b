"""
Newton continuity solver for the transverse Monge-Ampere families.

For ``t`` in [0, 1] the two equations in log form are

    Phi_1(u, t) = log(rho_u / rho) + t (2m+2) u - h                 (s1)
    Phi_2(u, t) = Phi_1(u, t) + (2m+2) L(0, u)                        (s2)

with linearizations

    dPhi_1(delta) = -box_u delta + t (2m+2) delta
    dPhi_2(delta) = dPhi_1(delta) + ((2m+2)/V) int delta dmu_u.

The unknown is the vector of active spectral coefficients of ``u`` (all
degrees, or even degrees only).  Residuals are Galerkin projections onto the
active harmonics; the Jacobian is assembled densely from batched transforms
for moderate sizes and applied matrix-free inside GMRES otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (
    NewtonDivergenceError,
    NonPositiveStateError,
    SingularOperatorError,
)
from .functionals import functional_I, functional_J, functional_M
from .model import BasicFunction, MetricState, TransverseModel, metric_state, random_potential

__all__ = [
    "ContinuityFamily",
    "LinearizedSolution",
    "NewtonResult",
    "SolverOptions",
    "UniquenessReport",
    "continuity_solve",
    "l_zero",
    "linearized_apply",
    "linearized_solve",
    "newton_solve",
    "observed_order",
    "residual",
    "s1_from_s2",
    "s2_from_s1",
    "uniqueness_experiment",
]

log = logging.getLogger(__name__)

EQUATIONS = ("s1", "s2")


def _check_eqn(eqn: str) -> str:
    if eqn not in EQUATIONS:
        raise ValueError(f"equation must be one of {EQUATIONS}, got {eqn!r}")
    return eqn


# ---------------------------------------------------------------------------
# options
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    """
    Newton and t-stepping controls.

    Attributes
    ----------
    tol : float
        Max-norm tolerance on the Galerkin residual.
    max_iter : int
        Newton iterations per t-step.
    dt_initial, dt_min, dt_max : float
        Step-size controller bounds (``dt_min <= dt_initial <= dt_max``).
    shrink, grow : float
        Factors applied after a failed or a fast step.
    fast_iterations : int
        A step converging in at most this many iterations grows ``dt``.
    project_near_kernel : bool
        Solve Newton systems in the least-squares sense on the complement of
        singular directions (full-space diagnostics near ``t = 1``).
    near_kernel_tol : float
        Singular values below this are treated as kernel when projecting.
    singular_tol : float
        Smallest singular value below which the operator counts as singular.
    t_final : float
        Target value of ``t``; below the starting value for backward runs.
    checkpoints : tuple of float
        Values of ``t`` that the adaptive controller must land on.
    schedule : tuple of float, optional
        Fixed list of ``t`` values (disables the adaptive controller).
    predictor : {"secant", "constant"}
    dense_limit : int
        Use a dense Jacobian up to this many unknowns, GMRES above.
    record_functionals : bool
        Record L, M, I, J at every accepted ``t``.
    record_singular_values : bool
        Record the smallest singular value of the linearization.
    """

    tol: float = 1e-10
    max_iter: int = 30
    dt_initial: float = 0.1
    dt_min: float = 1e-4
    dt_max: float = 0.25
    shrink: float = 0.5
    grow: float = 1.5
    fast_iterations: int = 4
    project_near_kernel: bool = False
    near_kernel_tol: float = 1e-3
    singular_tol: float = 1e-8
    t_final: float = 1.0
    checkpoints: tuple[float, ...] = ()
    schedule: tuple[float, ...] | None = None
    predictor: str = "secant"
    dense_limit: int = 1200
    record_functionals: bool = True
    record_singular_values: bool = True

    def __post_init__(self):
        if not (self.tol > 0 and self.singular_tol > 0 and self.near_kernel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.dt_min <= self.dt_initial <= self.dt_max):
            raise ValueError("step bounds must satisfy 0 < dt_min <= dt_initial <= dt_max")
        if not (0 < self.shrink < 1 <= self.grow):
            raise ValueError("need 0 < shrink < 1 <= grow")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.predictor not in ("secant", "constant"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if not 0.0 <= self.t_final <= 1.0:
            raise ValueError("t_final must lie in [0, 1]")


# ---------------------------------------------------------------------------
# residual and linearization
# ---------------------------------------------------------------------------


def l_zero(state: MetricState) -> float:
    """
    ``L(0, u)`` along the linear segment.

    For m = 1 the density is affine in the path parameter, so the path
    integral is ``(1/V) int u (rho + rho_u)/2`` exactly.
    """
    model = state.model
    avg = 0.5 * (model.background_density + state.density)
    return float(np.sum(state.u.values * avg * model.area_weights) * model.fiber_length / model.volume)


def residual(state: MetricState, t: float, eqn: str, h: BasicFunction | None = None) -> BasicFunction:
    """
    Log-form residual ``Phi_1`` or ``Phi_2`` on the grid.

    Raises
    ------
    NonPositiveStateError
        The Monge-Ampere ratio is not positive.
    """
    _check_eqn(eqn)
    state.require_positive()
    model = state.model
    if h is None:
        h = model.h
    ec = model.einstein_constant
    vals = np.log(state.ma_ratio) + t * ec * state.u.values - h.values
    if eqn == "s2":
        vals = vals + ec * l_zero(state)
    return model.function_from_values(vals)


class _Linearization:
    """The operator ``dPhi`` at a state restricted to the active coefficients."""

    def __init__(self, state: MetricState, t: float, eqn: str):
        state.require_positive()
        self.state = state
        self.t = float(t)
        self.eqn = _check_eqn(eqn)
        model = state.model
        self.model = model
        self.grid = model.grid
        self.active = np.nonzero(model.active_mask)[0]
        self.n = self.active.size
        self.lam = self.grid.eigenvalues[self.active]
        self.inv_rho = 1.0 / state.density
        ec = model.einstein_constant
        self.ec = ec
        if eqn == "s2":
            # ((2m+2)/V) * int delta dmu_u, projected onto Y_00
            self.mean_row = (
                ec / model.volume * model.fiber_length * 0.25 * np.sqrt(4.0 * np.pi) * state.density_coeffs[self.active]
            )
        else:
            self.mean_row = None

    def _full(self, x: np.ndarray) -> np.ndarray:
        c = np.zeros(x.shape[:-1] + (self.grid.size,))
        c[..., self.active] = x
        return c

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vals = self.grid.synthesis(self._full(-2.0 * self.lam * x)) * self.inv_rho
        out = self.grid.analysis(vals)[..., self.active] + self.t * self.ec * x
        if self.mean_row is not None:
            out[..., 0] += x @ self.mean_row
        return out

    def dense(self, chunk: int = 256) -> np.ndarray:
        n = self.n
        G = np.empty((n, n))
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            E = np.zeros((stop - start, self.grid.size))
            E[np.arange(stop - start), self.active[start:stop]] = 1.0
            vals = self.grid.synthesis(E) * self.inv_rho
            G[:, start:stop] = self.grid.analysis(vals)[:, self.active].T
        J = G * (-2.0 * self.lam)[None, :]
        J[np.diag_indices(n)] += self.t * self.ec
        if self.mean_row is not None:
            J[0, :] += self.mean_row
        return J

    def preconditioner(self) -> np.ndarray:
        rho_h = 1.0 / self.inv_rho.mean()
        d = -2.0 * self.lam / rho_h + self.t * self.ec
        if self.mean_row is not None:
            d[0] += self.mean_row[0]
        small = np.abs(d) < 0.1
        d[small] = np.where(d[small] >= 0, 0.1, -0.1)
        return d


def _smallest_singular_value(J: np.ndarray, lu=None, iterations: int = 40) -> float:
    if J.shape[0] <= 1200:
        return float(sla.svdvals(J).min())
    if lu is None:
        lu = sla.lu_factor(J, check_finite=False)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(J.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = sla.lu_solve(lu, x, trans=0)
        z = sla.lu_solve(lu, y, trans=1)
        nz = np.linalg.norm(z)
        if not np.isfinite(nz) or nz == 0:
            return 0.0
        est = nz
        x = z / nz
    return float(1.0 / np.sqrt(est))


def _rcond(J: np.ndarray, lu) -> float:
    anorm = np.abs(J).sum(axis=0).max()
    rcond, info = sla.lapack.dgecon(lu[0], anorm, norm="1")
    return float(rcond) if info == 0 else 0.0


@dataclass
class LinearizedSolution:
    """Result of :func:`linearized_solve`."""

    delta: BasicFunction
    smallest_singular_value: float
    kernel_dimension: int
    projected: bool


def linearized_apply(state: MetricState, t: float, eqn: str, delta: BasicFunction) -> BasicFunction:
    """
    Apply ``dPhi`` to ``delta`` pointwise on the grid (no projection).

    ``-box_u delta + t(2m+2) delta`` plus, for (s2), ``((2m+2)/V) int delta dmu_u``.
    """
    _check_eqn(eqn)
    state.require_positive()
    model = state.model
    g = model.grid
    ec = model.einstein_constant
    box = 2.0 * g.synthesis(g.laplacian(delta.coeffs)) / state.density
    vals = -box + t * ec * delta.values
    if eqn == "s2":
        vals = vals + ec / model.volume * np.sum(delta.values * state.measure)
    return model.function_from_values(vals)


def linearized_solve(
    state: MetricState,
    t: float,
    eqn: str,
    rhs: BasicFunction,
    project: bool = False,
    near_kernel_tol: float = 1e-3,
    singular_tol: float = 1e-8,
) -> LinearizedSolution:
    """
    Solve ``dPhi_u(delta) = rhs`` on the active harmonics.

    Parameters
    ----------
    state : MetricState
    t : float
    eqn : {"s1", "s2"}
    rhs : BasicFunction
    project : bool
        Solve in the least-squares sense on the complement of singular
        vectors with singular value below ``near_kernel_tol``.
    singular_tol : float
        Without projection, a smallest singular value below this raises.

    Returns
    -------
    LinearizedSolution

    Raises
    ------
    SingularOperatorError
        The operator is numerically singular and ``project`` is False.
    """
    lin = _Linearization(state, t, eqn)
    J = lin.dense()
    b = rhs.coeffs[lin.active]
    if project:
        U, s, Vt = sla.svd(J)
        keep = s >= near_kernel_tol
        x = Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])
        sigma = float(s.min())
        kernel = int((~keep).sum())
    else:
        lu = sla.lu_factor(J, check_finite=False)
        sigma = _smallest_singular_value(J, lu)
        if sigma < singular_tol:
            raise SingularOperatorError(f"linearized ({eqn}) operator is singular at t={t}", sigma)
        x = sla.lu_solve(lu, b)
        kernel = 0
    coeffs = lin._full(x)
    return LinearizedSolution(state.model.function_from_coeffs(coeffs), sigma, kernel, project)


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


def observed_order(residuals: Sequence[float], floor: float = 1e-13) -> float | None:
    """
    Convergence order from the last residual triple above ``floor``.

    ``p = log(r_{k+1}/r_k) / log(r_k/r_{k-1})``; ``None`` when fewer than
    three residuals above the floor are available or they do not decrease.
    """
    r = [x for x in residuals if x > floor]
    if len(r) < 3:
        return None
    r0, r1, r2 = r[-3:]
    if not (r2 < r1 < r0):
        return None
    return float(np.log(r2 / r1) / np.log(r1 / r0))


@dataclass
class NewtonResult:
    coeffs: np.ndarray
    state: MetricState
    iterations: int
    residuals: list[float]
    grid_residual: float
    order: float | None
    smallest_singular_value: float | None


def _galerkin_norm(grid, res_vals: np.ndarray, active: np.ndarray) -> tuple[np.ndarray, float]:
    c = grid.analysis(res_vals)
    r = c[active]
    full = np.zeros(grid.size)
    full[active] = r
    return r, float(np.abs(grid.synthesis(full)).max())


def newton_solve(
    model: TransverseModel,
    t: float,
    eqn: str,
    initial: np.ndarray | BasicFunction | None = None,
    options: SolverOptions | None = None,
) -> NewtonResult:
    """
    Solve ``Phi(u, t) = 0`` by damped Newton iteration.

    The step is halved until the new state is admissible and the residual
    decreases.

    Raises
    ------
    NewtonDivergenceError
        No convergence within ``max_iter`` or the line search stalls.
    NonPositiveStateError
        The initial guess is not admissible.
    SingularOperatorError
        Singular Jacobian without ``project_near_kernel``.
    """
    _check_eqn(eqn)
    opts = options or SolverOptions()
    grid = model.grid
    active = np.nonzero(model.active_mask)[0]
    h = model.h
    if initial is None:
        u = np.zeros(grid.size)
    elif isinstance(initial, BasicFunction):
        u = initial.coeffs.copy()
    else:
        u = np.asarray(initial, dtype=float).copy()
    u[~model.active_mask] = 0.0

    state = metric_state(model, u)
    if not state.positive:
        raise NonPositiveStateError(f"initial guess is not admissible (min ratio {state.min_ratio:.3e})")
    res = residual(state, t, eqn, h).values
    r, norm = _galerkin_norm(grid, res, active)
    history = [norm]
    iterations = 0
    lin = None
    while norm >= opts.tol:
        if iterations >= opts.max_iter:
            raise NewtonDivergenceError("Newton did not converge", t, norm)
        lin = _Linearization(state, t, eqn)
        step = _newton_step(lin, -r, opts, t)
        alpha = 1.0
        accepted = False
        while alpha >= 1.0 / 1024:
            trial = u.copy()
            trial[active] += alpha * step
            trial_state = metric_state(model, trial)
            if trial_state.positive:
                tres = residual(trial_state, t, eqn, h).values
                tr, tnorm = _galerkin_norm(grid, tres, active)
                if np.isfinite(tnorm) and tnorm < norm:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise NewtonDivergenceError("line search failed to reduce the residual", t, norm)
        u, state, r, norm = trial, trial_state, tr, tnorm
        history.append(norm)
        iterations += 1

    sigma = None
    if opts.record_singular_values:
        lin = _Linearization(state, t, eqn)
        if lin.n <= opts.dense_limit:
            sigma = _smallest_singular_value(lin.dense())
    grid_res = float(np.abs(residual(state, t, eqn, h).values).max())
    return NewtonResult(u, state, iterations, history, grid_res, observed_order(history), sigma)


def _newton_step(lin: _Linearization, b: np.ndarray, opts: SolverOptions, t: float) -> np.ndarray:
    if lin.n <= opts.dense_limit:
        J = lin.dense()
        if opts.project_near_kernel:
            U, s, Vt = sla.svd(J)
            keep = s >= opts.near_kernel_tol
            return Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])
        lu = sla.lu_factor(J, check_finite=False)
        rc = _rcond(J, lu)
        if rc < 1e-14:
            raise SingularOperatorError(f"Newton Jacobian is singular at t={t}", _smallest_singular_value(J, lu))
        return sla.lu_solve(lu, b)
    d = lin.preconditioner()
    A = LinearOperator((lin.n, lin.n), matvec=lin.matvec, dtype=float)
    M = LinearOperator((lin.n, lin.n), matvec=lambda x: x / d, dtype=float)
    x, info = gmres(A, b, M=M, rtol=1e-13, atol=0.0, restart=80, maxiter=20)
    if info != 0:
        res = np.linalg.norm(lin.matvec(x) - b) / max(np.linalg.norm(b), 1e-300)
        if res > 1e-8:
            raise NewtonDivergenceError(f"GMRES failed (relative residual {res:.2e})", t, float(np.abs(b).max()))
    return x


# ---------------------------------------------------------------------------
# continuity families
# ---------------------------------------------------------------------------


@dataclass
class ContinuityFamily:
    """
    Solutions ``u_t`` along the continuity path with per-step diagnostics.

    ``traces`` maps ``"L", "M", "I", "J"`` to the values of the functional at
    ``(0, u_t)`` for every stored ``t``.
    """

    model: TransverseModel
    eqn: str
    ts: list[float] = field(default_factory=list)
    states: list[MetricState] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    grid_residuals: list[float] = field(default_factory=list)
    orders: list[float | None] = field(default_factory=list)
    residual_histories: list[list[float]] = field(default_factory=list)
    singular_values: list[float | None] = field(default_factory=list)
    traces: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in "LMIJ"})
    stop_reason: str = ""
    options: SolverOptions | None = None

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def reached(self) -> float:
        return self.ts[-1] if self.ts else float("nan")

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([s.u.coeffs for s in self.states])

    def state_at(self, t: float, atol: float = 1e-12) -> MetricState:
        for tk, s in zip(self.ts, self.states):
            if abs(tk - t) <= atol:
                return s
        raise KeyError(f"t={t} is not a stored node")

    def append(self, t: float, result: NewtonResult, record_functionals: bool = True):
        self.ts.append(float(t))
        self.states.append(result.state)
        self.iterations.append(result.iterations)
        self.residuals.append(result.residuals[-1])
        self.grid_residuals.append(result.grid_residual)
        self.orders.append(result.order)
        self.residual_histories.append(list(result.residuals))
        self.singular_values.append(result.smallest_singular_value)
        if record_functionals:
            self._record_traces(result.state)

    def _record_traces(self, state: MetricState):
        zero = np.zeros(self.model.grid.size)
        u = state.u.coeffs
        self.traces["L"].append(l_zero(state))
        self.traces["M"].append(functional_M(self.model, zero, u))
        self.traces["I"].append(functional_I(self.model, zero, u))
        self.traces["J"].append(functional_J(self.model, zero, u))

    def sorted(self) -> "ContinuityFamily":
        """Copy with nodes in increasing ``t`` (backward runs are stored in solve order)."""
        order = np.argsort(self.ts)
        out = replace(self)
        for name in ("ts", "states", "iterations", "residuals", "grid_residuals", "orders", "residual_histories", "singular_values"):
            vals = getattr(self, name)
            setattr(out, name, [vals[i] for i in order])
        out.traces = {k: [v[i] for i in order] for k, v in self.traces.items() if len(v) == len(self.ts)}
        return out

    def to_dict(self) -> dict:
        def clean(x):
            return None if x is None else float(x)

        return {
            "schema": "sasaki-ke/family/1",
            "eqn": self.eqn,
            "model": self.model.config.to_dict() if self.model.config else None,
            "t": self.ts,
            "coeffs": [s.u.coeffs.tolist() for s in self.states],
            "iterations": self.iterations,
            "residual": self.residuals,
            "grid_residual": self.grid_residuals,
            "order": [clean(o) for o in self.orders],
            "residual_history": self.residual_histories,
            "smallest_singular_value": [clean(s) for s in self.singular_values],
            "traces": self.traces,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_dict(cls, model: TransverseModel, data: dict) -> "ContinuityFamily":
        fam = cls(model=model, eqn=data["eqn"])
        fam.ts = [float(t) for t in data["t"]]
        fam.states = [metric_state(model, np.asarray(c)) for c in data["coeffs"]]
        fam.iterations = list(data.get("iterations", [0] * len(fam.ts)))
        fam.residuals = list(data.get("residual", [float("nan")] * len(fam.ts)))
        fam.grid_residuals = list(data.get("grid_residual", [float("nan")] * len(fam.ts)))
        fam.orders = list(data.get("order", [None] * len(fam.ts)))
        fam.residual_histories = list(data.get("residual_history", [[] for _ in fam.ts]))
        fam.singular_values = list(data.get("smallest_singular_value", [None] * len(fam.ts)))
        fam.traces = {k: list(v) for k, v in data.get("traces", {}).items()}
        fam.stop_reason = data.get("stop_reason", "")
        return fam

    def csv_rows(self) -> list[dict]:
        rows = []
        for k, t in enumerate(self.ts):
            row = {
                "t": t,
                "iterations": self.iterations[k],
                "residual": self.residuals[k],
                "grid_residual": self.grid_residuals[k],
                "smallest_singular_value": self.singular_values[k],
            }
            for name in "LMIJ":
                vals = self.traces.get(name, [])
                row[name] = vals[k] if k < len(vals) else None
            rows.append(row)
        return rows


def s1_from_s2(state: MetricState, t: float) -> MetricState:
    """Shift an (s2) solution to an (s1) solution: ``u + L(0, u)/t``."""
    if t <= 0:
        raise ValueError("the (s2) to (s1) shift needs t > 0")
    model = state.model
    return metric_state(model, state.u + l_zero(state) / t)


def s2_from_s1(state: MetricState, t: float) -> MetricState:
    """Shift an (s1) solution to an (s2) solution: ``u - L(0, u)/(t + 1)``."""
    model = state.model
    return metric_state(model, state.u - l_zero(state) / (t + 1.0))


def _next_t(t: float, dt: float, direction: float, opts: SolverOptions, pending: list[float]) -> float:
    target = t + direction * dt
    for c in pending:
        if direction > 0 and t < c < target:
            target = c
            break
        if direction < 0 and target < c < t:
            target = c
            break
    if direction > 0:
        return min(target, opts.t_final)
    return max(target, opts.t_final)


def continuity_solve(
    model: TransverseModel,
    eqn: str = "s2",
    options: SolverOptions | None = None,
    initial: np.ndarray | BasicFunction | None = None,
    t_start: float = 0.0,
) -> ContinuityFamily:
    """
    Follow the continuity path from ``t_start`` towards ``options.t_final``.

    (s1) families are produced from the (s2) family by the shift
    ``u + L(0, u)/t``; the ``t = 0`` node keeps the (s2) normalisation.

    Parameters
    ----------
    model : TransverseModel
    eqn : {"s1", "s2"}
    options : SolverOptions, optional
    initial : coefficients or BasicFunction, optional
        Newton initial guess at ``t_start`` (zero by default).
    t_start : float
        Starting parameter; a ``t_final`` below it runs the path backward.

    Returns
    -------
    ContinuityFamily
        ``stop_reason`` is empty when ``t_final`` was reached and describes
        the obstruction otherwise (divergence, positivity loss, singularity).

    Raises
    ------
    NewtonDivergenceError
        The solve at ``t_start`` itself fails.
    """
    _check_eqn(eqn)
    opts = options or SolverOptions()
    if eqn == "s1":
        fam2 = continuity_solve(model, "s2", opts, initial, t_start)
        return _shift_family(fam2)

    fam = ContinuityFamily(model=model, eqn="s2", options=opts)
    first = newton_solve(model, t_start, "s2", initial, opts)
    fam.append(t_start, first, opts.record_functionals)
    log.info("t=%.4f solved in %d iterations", t_start, first.iterations)

    direction = 1.0 if opts.t_final >= t_start else -1.0
    if opts.schedule is not None:
        targets = [float(x) for x in opts.schedule if direction * (x - t_start) > 1e-15]
        targets.sort(reverse=direction < 0)
    else:
        targets = None
    pending = sorted((c for c in opts.checkpoints if direction * (c - t_start) > 1e-15), reverse=direction < 0)

    dt = opts.dt_initial
    t = t_start
    prev: tuple[float, np.ndarray] | None = None
    cur = (t_start, first.coeffs)
    while True:
        if targets is not None:
            if not targets:
                break
            t_new = targets[0]
        else:
            if direction * (opts.t_final - t) <= 1e-15:
                break
            t_new = _next_t(t, dt, direction, opts, pending)
        guess = cur[1]
        if opts.predictor == "secant" and prev is not None:
            guess = cur[1] + (t_new - cur[0]) / (cur[0] - prev[0]) * (cur[1] - prev[1])
            if not metric_state(model, guess).positive:
                guess = cur[1]
        try:
            res = newton_solve(model, t_new, "s2", guess, opts)
        except SingularOperatorError as exc:
            fam.stop_reason = f"singular linearization at t={t_new:.6g}: {exc}"
            break
        except (NewtonDivergenceError, NonPositiveStateError) as exc:
            if targets is not None:
                fam.stop_reason = f"fixed schedule failed at t={t_new:.6g}: {exc}"
                break
            dt *= opts.shrink
            if dt < opts.dt_min:
                fam.stop_reason = f"step size fell below dt_min near t={t_new:.6g}: {exc}"
                break
            continue
        fam.append(t_new, res, opts.record_functionals)
        log.info("t=%.4f solved in %d iterations (residual %.2e)", t_new, res.iterations, res.residuals[-1])
        prev, cur = cur, (t_new, res.coeffs)
        t = t_new
        if targets is not None:
            targets.pop(0)
        else:
            pending = [c for c in pending if direction * (c - t) > 1e-15]
            if res.iterations <= opts.fast_iterations:
                dt = min(dt * opts.grow, opts.dt_max)
        sigma = res.smallest_singular_value
        if sigma is not None and sigma < opts.singular_tol and abs(t - opts.t_final) > 1e-15:
            fam.stop_reason = f"singular linearization at interior t={t:.6g} (smallest singular value {sigma:.3e})"
            break
    return fam


def _shift_family(fam2: ContinuityFamily) -> ContinuityFamily:
    model = fam2.model
    fam = replace(fam2, eqn="s1")
    fam.states = [s if t == 0 else s1_from_s2(s, t) for t, s in zip(fam2.ts, fam2.states)]
    h = model.h
    fam.residuals = []
    fam.grid_residuals = []
    for t, s in zip(fam.ts, fam.states):
        res = residual(s, t, "s1", h).values
        _, norm = _galerkin_norm(model.grid, res, np.nonzero(model.active_mask)[0])
        fam.residuals.append(norm)
        fam.grid_residuals.append(float(np.abs(res).max()))
    if fam2.options is not None and fam2.options.record_functionals:
        fam.traces = {k: [] for k in "LMIJ"}
        for s in fam.states:
            fam._record_traces(s)
    return fam


# ---------------------------------------------------------------------------
# uniqueness experiments
# ---------------------------------------------------------------------------


@dataclass
class UniquenessReport:
    """
    Pairwise agreement of continuity branches started from different seeds.

    ``distances[(i, j)]`` is the maximum over common ``t`` of
    ``||u_t - u'_t||_inf`` between branches ``i`` and ``j``.
    """

    seeds: list[int]
    common_t: list[float]
    distances: dict
    max_distance: float
    final_distances: dict
    failures: dict
    backward_tau: float | None = None
    backward_t0_distance: float | None = None
    backward_l_zero: float | None = None
    backward_reached: float | None = None
    families: list[ContinuityFamily] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": "sasaki-ke/uniqueness/1",
            "seeds": self.seeds,
            "common_t": self.common_t,
            "pairwise_max_distance": {f"{i}-{j}": d for (i, j), d in self.distances.items()},
            "pairwise_final_distance": {f"{i}-{j}": d for (i, j), d in self.final_distances.items()},
            "max_distance": self.max_distance,
            "failures": {str(k): v for k, v in self.failures.items()},
            "backward_tau": self.backward_tau,
            "backward_t0_distance": self.backward_t0_distance,
            "backward_l_zero": self.backward_l_zero,
            "backward_reached": self.backward_reached,
        }


def uniqueness_experiment(
    model: TransverseModel,
    eqn: str = "s2",
    seeds: Sequence[int] = (1, 2),
    options: SolverOptions | None = None,
    tau: float | None = 0.7,
    initial_scale: float = 0.2,
) -> UniquenessReport:
    """
    Run independent continuity branches and compare them.

    Each seed draws its own admissible Newton initial guess at ``t = 0``
    (scaled by ``initial_scale``) and its own initial step size; all branches
    share ten checkpoints ``t = 0.1, ..., 1.0`` (clipped to ``t_final``) where
    they are compared.  With ``tau`` set, the first branch's solution at
    ``tau`` is continued backward to ``t = 0`` and compared with the forward
    ``t = 0`` solution.
    """
    _check_eqn(eqn)
    if not model.even_only:
        log.warning("uniqueness experiment on a full-symmetry model: the hypothesis on holomorphic fields fails")
    base = options or SolverOptions()
    grid_t = [round(0.1 * k, 10) for k in range(1, 11) if 0.1 * k <= base.t_final + 1e-12]
    checkpoints = tuple(sorted(set(base.checkpoints) | set(grid_t) | ({tau} if tau else set())))
    families: list[ContinuityFamily] = []
    failures: dict = {}
    for k, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        guess = random_potential(model, rng, amplitude=initial_scale)
        dt0 = float(np.clip(base.dt_initial * (0.6 + 0.8 * rng.random()), base.dt_min, base.dt_max))
        opts = replace(base, checkpoints=checkpoints, dt_initial=dt0, schedule=None)
        try:
            fam = continuity_solve(model, eqn, opts, initial=guess)
        except Exception as exc:  # reported, not dropped
            failures[seed] = f"{type(exc).__name__}: {exc}"
            continue
        if fam.stop_reason:
            failures[seed] = fam.stop_reason
        families.append(fam)

    common = sorted(set.intersection(*(set(np.round(f.ts, 12)) for f in families))) if families else []
    distances, finals = {}, {}
    for i in range(len(families)):
        for j in range(i + 1, len(families)):
            d = [
                float(np.abs(families[i].state_at(t, 1e-9).u.values - families[j].state_at(t, 1e-9).u.values).max())
                for t in common
            ]
            distances[(i, j)] = max(d) if d else float("nan")
            finals[(i, j)] = d[-1] if d else float("nan")
    max_dist = max(distances.values()) if distances else 0.0

    report = UniquenessReport(list(seeds), [float(t) for t in common], distances, max_dist, finals, failures, families=families)
    if tau is not None and families and any(abs(t - tau) < 1e-12 for t in families[0].ts):
        fwd = families[0]
        start = fwd.state_at(tau, 1e-12)
        back_opts = replace(base, t_final=0.0, checkpoints=(), schedule=None, dt_initial=min(base.dt_max, 0.13))
        try:
            back = continuity_solve(model, "s2", back_opts, initial=start.u.coeffs, t_start=tau)
            report.backward_tau = tau
            report.backward_reached = back.ts[-1]
            if abs(back.ts[-1]) < 1e-15:
                end = back.states[-1]
                report.backward_t0_distance = float(np.abs(end.u.values - fwd.state_at(0.0).u.values).max())
                report.backward_l_zero = l_zero(end)
            else:
                failures["backward"] = back.stop_reason
        except Exception as exc:
            failures["backward"] = f"{type(exc).__name__}: {exc}"
    elif tau is not None:
        failures["backward"] = "no forward branch reached tau"
    return report
