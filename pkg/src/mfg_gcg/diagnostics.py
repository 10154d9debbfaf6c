"""
Convergence diagnostics: deviation norms, rate fits, reference solutions and
a Monte Carlo estimate of the value function.

The reference solution is a long Frank-Wolfe run; deviation norms and the
primal gap of shorter runs are measured against it. Its own exploitability
is the only computable optimality certificate and is recorded as provenance.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, DomainError
from .fokker_planck import FlowPair, chi_inverse
from .gcg import GcgState, IterateRecord, StepSchedule, predict_couplings, run
from .hjb import CouplingState, ValueFunction, best_response_control, solve_with_control
from .model import MfgProblem

logger = logging.getLogger(__name__)

DEGRADED_SIGMA = 1e-4

METRIC_ALIASES = {"eps": "primal_gap", "sigma": "exploitability"}


# -- reference ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    """
    Numerical stand-in for the equilibrium.

    Attributes:
        flow: best iterate ``(m, w)`` of the reference run
        value: value function against the couplings predicted from ``flow``
        coupling: ``(gamma, P)`` predicted from ``flow``
        potential: ``J~`` at ``flow``
        sigma: exploitability of ``flow``
        iterations: budget of the reference run
        schedule: schedule label
        best_k: iteration index of ``flow``
    """

    flow: FlowPair
    value: ValueFunction
    coupling: CouplingState
    potential: float
    sigma: float
    iterations: int
    schedule: str
    best_k: int

    @property
    def degraded(self) -> bool:
        return not self.sigma <= DEGRADED_SIGMA

    def provenance(self) -> dict:
        return {
            "iterations": self.iterations,
            "schedule": self.schedule,
            "best_k": self.best_k,
            "potential": self.potential,
            "sigma": self.sigma,
            "degraded": self.degraded,
            # deviation norms against this reference carry a bias of this order
            "bias_sqrt_sigma": math.sqrt(max(self.sigma, 0.0)),
        }


def make_reference(problem: MfgProblem, budget: int,
                   schedule: StepSchedule | None = None) -> ReferenceSolution:
    """
    Run ``budget`` conditional gradient steps and keep the iterate with the lowest ``J~``.

    The returned iterate is the earliest minimizer, so doubling the budget
    can only lower the recorded potential.
    """
    schedule = schedule or StepSchedule("frank_wolfe")
    best: dict = {}

    def keep_best(record: IterateRecord, measured: FlowPair, state: GcgState) -> None:
        if not best or record.potential_cost < best["record"].potential_cost:
            best.update(record=record, flow=measured, value=state.value, coupling=state.coupling)

    run(problem, schedule, budget, callback=keep_best)
    rec = best["record"]
    ref = ReferenceSolution(best["flow"], best["value"], best["coupling"], rec.potential_cost,
                            rec.exploitability, budget, schedule.label(), rec.k)
    if ref.degraded:
        logger.warning("reference quality degraded: sigma=%.3e > %.0e", ref.sigma, DEGRADED_SIGMA)
    return ref


# -- deviation norms ------------------------------------------------------------


def norms(problem: MfgProblem, current: GcgState, reference: ReferenceSolution) -> dict[str, float]:
    """
    Six deviation norms of ``current`` from ``reference``.

    ``current.belief`` is the flow; ``current.coupling`` and ``current.value``
    must have been computed from that flow (they are recomputed when missing).
    Time integrals use the left-endpoint rule over levels ``0..nt-1``; the
    density norm takes the maximum over all levels and the value and
    congestion norms the maximum over all nodes.
    """
    grid = problem.grid
    ref_grid = reference.flow.m.grid
    if current.belief.m.grid != grid or ref_grid != grid:
        raise ConfigError("deviation norms need the problem, iterate and reference on one grid")
    belief = current.belief
    coupling = current.coupling
    value = current.value
    if coupling is None:
        coupling = predict_couplings(problem, belief)
    if value is None:
        value = solve_with_control(problem, coupling, check_cfl=False)[0]
    nt = grid.nt
    dt = grid.dt

    def l2_q(a: NDArray, b: NDArray) -> float:
        diff = (a - b)[:nt]
        return math.sqrt(dt * float(np.sum(diff * diff)) * grid.cell_volume)

    dm = belief.m.values - reference.flow.m.values
    dm_levels = np.sqrt(grid.integrate(dm * dm))
    dP = (coupling.price - reference.coupling.price)[:nt]
    return {
        "dv_l2": l2_q(chi_inverse(belief).values, chi_inverse(reference.flow).values),
        "dm_linf_l2": float(np.max(dm_levels)),
        "dw_l2": l2_q(belief.w.values, reference.flow.w.values),
        "dP_l2": math.sqrt(dt * float(np.sum(dP * dP))),
        "dgamma_linf": float(np.max(np.abs(coupling.gamma.values - reference.coupling.gamma.values))),
        "du_linf": float(np.max(np.abs(value.u.values - reference.value.u.values))),
    }


class DeviationTracker:
    """
    ``gcg.run`` callback filling the primal gap and deviation norms of each record.

    Args:
        problem: the problem being solved
        reference: reference solution on the same grid
        every: measure deviations every ``every`` iterations (the primal gap is always filled)
    """

    def __init__(self, problem: MfgProblem, reference: ReferenceSolution, every: int = 1):
        self.problem = problem
        self.reference = reference
        self.every = max(1, int(every))

    def __call__(self, record: IterateRecord, measured: FlowPair, state: GcgState) -> None:
        record.primal_gap = record.potential_cost - self.reference.potential
        if record.k % self.every == 0:
            current = GcgState(measured, None, state.value, state.coupling)
            for name, val in norms(self.problem, current, self.reference).items():
                setattr(record, name, val)


def attach_primal_gaps(records: Sequence[IterateRecord], optimum: float) -> None:
    """Set ``primal_gap = potential_cost - optimum`` on every record."""
    for rec in records:
        rec.primal_gap = rec.potential_cost - optimum


# -- rate fitting -----------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Least-squares line ``log(metric) = slope * log(k) + intercept`` over ``[k_lo, k_hi]``."""

    k_lo: int
    k_hi: int
    slope: float
    intercept: float
    residual: float
    metric: str = ""

    def __post_init__(self):
        if not (1 <= self.k_lo < self.k_hi):
            raise ConfigError(f"rate window needs 1 <= k_lo < k_hi, got [{self.k_lo}, {self.k_hi}]")
        if not math.isfinite(self.residual):
            raise DomainError("rate fit residual is not finite")

    def to_dict(self) -> dict:
        return {"metric": self.metric, "k_lo": self.k_lo, "k_hi": self.k_hi, "slope": self.slope,
                "intercept": self.intercept, "residual": self.residual}


def fit_power_law(ks: Sequence[float], values: Sequence[float], metric: str = "") -> RateFit:
    """Fit ``values ~ C k^slope`` in log-log coordinates; the residual is the RMS misfit."""
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    if ks.size < 2:
        raise ConfigError("a rate fit needs at least two points")
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        k = ks[bad[0]]
        raise DomainError(f"{metric or 'metric'} is not positive at k={int(k)} ({values[bad[0]]!r})")
    x, y = np.log(ks), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(int(ks.min()), int(ks.max()), float(slope), float(intercept), residual, metric)


def metric_series(records: Sequence[IterateRecord], metric: str) -> tuple[NDArray, NDArray]:
    """``(k, value)`` arrays for a record field or one of the aliases ``eps``/``sigma``."""
    name = METRIC_ALIASES.get(metric, metric)
    if not records or not hasattr(records[0], name):
        raise ConfigError(f"unknown metric {metric!r}")
    ks = np.array([r.k for r in records], dtype=float)
    vals = np.array([getattr(r, name) for r in records], dtype=float)
    return ks, vals


def fit_rate(records: Sequence[IterateRecord], metric: str,
             window: tuple[int, int] = (16, 256)) -> RateFit:
    """Log-log slope of ``metric`` over iterations ``k_lo <= k <= k_hi``."""
    k_lo, k_hi = window
    if not 1 <= k_lo < k_hi:
        raise ConfigError(f"rate window needs 1 <= k_lo < k_hi, got {window}")
    ks, vals = metric_series(records, metric)
    sel = (ks >= k_lo) & (ks <= k_hi) & ~np.isnan(vals)
    return fit_power_law(ks[sel], vals[sel], metric)


def spread(values: Sequence[float]) -> float:
    """``max / median`` of a positive sequence."""
    values = np.asarray(values, dtype=float)
    return float(np.max(values) / np.median(values))


# -- descent and certificate checks ----------------------------------------------


def fit_descent_constant(records: Sequence[IterateRecord], k_max: int = 32) -> float:
    """
    Smallest ``C >= 0`` with ``J_{k+1} <= J_k - delta_k sigma_k + delta_k^2 C`` for ``k < k_max``.

    Fitting on an early window and checking on all iterations makes the
    check falsifiable.
    """
    best = 0.0
    for a, b in zip(records[:-1], records[1:]):
        if a.k >= k_max:
            break
        need = (b.potential_cost - a.potential_cost + a.delta_k * a.exploitability) / a.delta_k**2
        best = max(best, need)
    return best


def descent_violations(records: Sequence[IterateRecord], c_emp: float,
                       atol: float = 1e-12) -> list[int]:
    """Iterations ``k`` at which the descent inequality fails by more than ``atol``."""
    bad = []
    for a, b in zip(records[:-1], records[1:]):
        bound = a.potential_cost - a.delta_k * a.exploitability + a.delta_k**2 * c_emp
        if b.potential_cost > bound + atol:
            bad.append(a.k)
    return bad


def fit_recursion_constant(records: Sequence[IterateRecord], k_max: int = 32) -> float:
    """Smallest ``C >= 0`` with ``eps_{k+1} <= (1 - delta_k) eps_k + delta_k^2 C`` for ``k < k_max``."""
    best = 0.0
    for a, b in zip(records[:-1], records[1:]):
        if a.k >= k_max:
            break
        best = max(best, (b.primal_gap - (1 - a.delta_k) * a.primal_gap) / a.delta_k**2)
    return best


def recursion_violations(records: Sequence[IterateRecord], c_emp: float,
                         atol: float = 1e-12) -> list[int]:
    """Iterations ``k`` at which ``eps_{k+1} <= (1 - delta_k) eps_k + delta_k^2 C`` fails by more than ``atol``."""
    return [a.k for a, b in zip(records[:-1], records[1:])
            if b.primal_gap > (1 - a.delta_k) * a.primal_gap + a.delta_k**2 * c_emp + atol]


def certificate_violations(records: Sequence[IterateRecord], atol: float = 1e-6) -> list[int]:
    """Iterations at which ``eps_k > sigma_k + atol``."""
    return [r.k for r in records if r.primal_gap > r.exploitability + atol]


# -- Monte Carlo ----------------------------------------------------------------


def _interpolate(values: NDArray, pos: NDArray, nx: int) -> NDArray:
    """
    Periodic (bi)linear interpolation.

    ``values`` has shape ``(..., *space)`` and ``pos`` shape ``(n, d)`` in
    grid units; the result has shape ``(..., n)``.
    """
    d = pos.shape[1]
    base = np.floor(pos).astype(int)
    frac = pos - base
    out = 0.0
    for corner in range(2**d):
        weight = np.ones(pos.shape[0])
        idx = []
        for j in range(d):
            bit = (corner >> j) & 1
            weight = weight * (frac[:, j] if bit else 1.0 - frac[:, j])
            idx.append((base[:, j] + bit) % nx)
        out = out + values[(Ellipsis, *idx)] * weight
    return out


@dataclass(frozen=True, eq=False)
class _PathData:
    problem: MfgProblem
    coupling: CouplingState
    control: NDArray = field(repr=False)


def _simulate_block(data: _PathData, x0: NDArray, n_paths: int, seed: np.random.SeedSequence) -> NDArray:
    problem = data.problem
    grid = problem.grid
    d, nx, dt = grid.dim, grid.nx, grid.dt
    rng = np.random.Generator(np.random.Philox(seed))
    noise = math.sqrt(2.0 * problem.viscosity * dt)
    x = np.broadcast_to(x0, (n_paths, d)).copy()
    cost = np.zeros(n_paths)
    times = grid.times()
    for n in range(grid.nt):
        pos = x / grid.dx
        v = _interpolate(data.control[n], pos, nx).T  # (n_paths, d)
        gamma = _interpolate(data.coupling.gamma.values[n], pos, nx)
        t = np.full(n_paths, times[n])
        a = np.broadcast_to(problem.coupling.aggregation(x, t), (n_paths, problem.k_agg, d))
        price_term = np.einsum("k,nkd,nd->n", data.coupling.price[n], a, v)
        running = problem.cost.value(x, t, v) + gamma + price_term
        cost += dt * running
        x = np.mod(x + v * dt + noise * rng.standard_normal((n_paths, d)), 1.0)
    return cost + _interpolate(problem.g, x / grid.dx, nx)


def monte_carlo_value(problem: MfgProblem, coupling: CouplingState, x, n_paths: int, seed: int,
                      value: ValueFunction | None = None, block: int = 1024,
                      workers: int = 1) -> tuple[float, float]:
    """
    Monte Carlo estimate of the value function at ``(x, 0)``.

    Simulates ``dX = v(X, t) dt + sqrt(2 nu) dB`` by Euler-Maruyama on the
    solver time grid, with ``v`` the best-response feedback against
    ``coupling``, and averages the pathwise cost (running cost, congestion,
    price term and terminal cost). Paths are split into fixed blocks, each
    with its own Philox stream spawned from ``seed``, so the estimate does
    not depend on ``workers``.

    Returns:
        ``(estimate, standard_error)``; the standard error is NaN for one path.
    """
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}")
    grid = problem.grid
    x0 = np.mod(np.asarray(x, dtype=float).reshape(-1), 1.0)
    if x0.shape != (grid.dim,):
        raise ConfigError(f"x must have {grid.dim} coordinates, got {x0.shape[0]}")
    if value is None:
        value = solve_with_control(problem, coupling, check_cfl=False)[0]
    control = best_response_control(problem, coupling, value).values
    data = _PathData(problem, coupling, control)
    sizes = [min(block, n_paths - s) for s in range(0, n_paths, block)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _simulate_block(data, x0, *job), jobs))
    else:
        parts = [_simulate_block(data, x0, *job) for job in jobs]
    samples = np.concatenate(parts)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.nan
    return mean, se
