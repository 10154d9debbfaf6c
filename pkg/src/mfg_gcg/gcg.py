"""
Generalized conditional gradient / fictitious play iteration.

Each step predicts the congestion and price from the current belief, computes
the best response (HJB backward, then Fokker-Planck forward), measures the
exploitability of the belief and averages the belief toward the response.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvariantError, MfgError
from .fokker_planck import FlowPair, individual_cost, running_cost_levels, solve_fp
from .grid import ScalarField
from .hjb import CouplingState, ValueFunction, optimal_value, solve_with_control
from .model import MfgProblem, _congestion, aggregate, potential_F, predict_price

logger = logging.getLogger(__name__)

SCHEME_NOISE = 1e-6

DEVIATION_NAMES = ("dv_l2", "dm_linf_l2", "dw_l2", "dP_l2", "dgamma_linf", "du_linf")


@dataclass(frozen=True)
class StepSchedule:
    """Learning rate: ``frank_wolfe`` (2/(k+2)), ``fictitious_play`` (1/(k+1)) or ``constant``."""

    kind: str = "frank_wolfe"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("frank_wolfe", "fictitious_play", "constant"):
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if self.kind == "constant":
            if self.value is None or not (0.0 < self.value <= 1.0):
                raise ConfigError(f"constant step must lie in (0, 1], got {self.value}")

    def delta(self, k: int) -> float:
        if k < 0:
            raise ValueError(f"iteration index must be >= 0, got {k}")
        if self.kind == "frank_wolfe":
            return 2.0 / (k + 2)
        if self.kind == "fictitious_play":
            return 1.0 / (k + 1)
        return float(self.value)

    @classmethod
    def parse(cls, text: str) -> StepSchedule:
        """Parse ``fw``, ``fp`` or ``const:<delta>``."""
        text = text.strip()
        aliases = {"fw": "frank_wolfe", "frank_wolfe": "frank_wolfe",
                   "fp": "fictitious_play", "fictitious_play": "fictitious_play"}
        if text in aliases:
            return cls(aliases[text])
        if text.startswith("const:"):
            try:
                return cls("constant", float(text.split(":", 1)[1]))
            except ValueError as exc:
                raise ConfigError(f"bad constant schedule {text!r}") from exc
        raise ConfigError(f"unknown schedule {text!r} (expected fw, fp or const:<delta>)")

    def label(self) -> str:
        return {"frank_wolfe": "fw", "fictitious_play": "fp"}.get(self.kind, f"const:{self.value!r}")


@dataclass
class IterateRecord:
    """Per-iteration certificates; deviations stay NaN unless a reference is supplied."""

    k: int
    delta_k: float
    potential_cost: float
    exploitability: float
    primal_gap: float = math.nan
    scheme_noise: bool = False
    dv_l2: float = math.nan
    dm_linf_l2: float = math.nan
    dw_l2: float = math.nan
    dP_l2: float = math.nan
    dgamma_linf: float = math.nan
    du_linf: float = math.nan

    def deviations(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in DEVIATION_NAMES}


@dataclass(frozen=True, eq=False)
class GcgState:
    """Belief plus the quantities computed from it in the last step."""

    belief: FlowPair
    response: FlowPair | None = None
    value: ValueFunction | None = None
    coupling: CouplingState | None = None


def predict_couplings(problem: MfgProblem, belief: FlowPair) -> CouplingState:
    """``gamma = f(m_bar)`` and ``P = phi(A w_bar)``."""
    gamma = ScalarField(problem.grid, _congestion(problem, belief.m.values))
    return CouplingState(gamma, predict_price(problem, belief.w.values))


def best_response(problem: MfgProblem, coupling: CouplingState) -> tuple[FlowPair, ValueFunction]:
    """Minimizer of the individual cost for frozen couplings, with its value function."""
    value, control = solve_with_control(problem, coupling)
    return solve_fp(problem, control), value


def exploitability(problem: MfgProblem, coupling: CouplingState, belief: FlowPair,
                   value: ValueFunction) -> float:
    """
    Individual cost of the belief minus the optimal individual cost.

    Values in ``[-1e-6, 0)`` are rounding noise; anything more negative
    raises :class:`InvariantError`.
    """
    sigma = individual_cost(problem, coupling, belief) - optimal_value(problem, value)
    if sigma < -SCHEME_NOISE:
        raise InvariantError(f"negative exploitability {sigma:.3e}")
    return sigma


def potential_cost(problem: MfgProblem, pair: FlowPair) -> float:
    """Discrete potential ``J~(m, w)`` with the same quadrature as the individual cost."""
    grid = problem.grid
    nt = grid.nt
    m, w = pair.m.values, pair.w.values
    running = running_cost_levels(problem, m, w)
    congestion = potential_F(problem, m[:nt])
    price = problem.coupling.price_potential(grid.times()[:nt], aggregate(problem, w)[:nt])
    terminal = grid.integrate(problem.g * m[nt])
    return float(grid.dt * np.sum(running + congestion + price) + terminal)


Callback = Callable[[IterateRecord, FlowPair, GcgState], None]


def gcg_step(problem: MfgProblem, state: GcgState, k: int, schedule: StepSchedule,
             sigma_mode: str = "dual") -> tuple[GcgState, IterateRecord]:
    """
    One conditional gradient step.

    The returned state carries the averaged belief together with the response,
    value function and coupling computed from the previous belief.
    ``sigma_mode="primal"`` evaluates the individual cost at the response
    instead of using ``int u(0) m0``.
    """
    belief = state.belief
    coupling = predict_couplings(problem, belief)
    response, value = best_response(problem, coupling)
    if sigma_mode == "dual":
        sigma = exploitability(problem, coupling, belief, value)
    elif sigma_mode == "primal":
        sigma = individual_cost(problem, coupling, belief) - individual_cost(problem, coupling, response)
        if sigma < -SCHEME_NOISE:
            raise InvariantError(f"negative exploitability {sigma:.3e}")
    else:
        raise ConfigError(f"unknown sigma_mode {sigma_mode!r}")
    delta = schedule.delta(k)
    record = IterateRecord(k=k, delta_k=delta, potential_cost=potential_cost(problem, belief),
                           exploitability=sigma, scheme_noise=sigma < 0)
    new_state = GcgState(belief.combine(response, delta), response, value, coupling)
    return new_state, record


class GcgAborted(MfgError):
    """A step failed; ``records`` holds the iterations completed before the failure."""

    def __init__(self, cause: Exception, records: list[IterateRecord], state: GcgState):
        super().__init__(f"iteration {len(records)} failed: {cause}")
        self.cause = cause
        self.records = records
        self.state = state


@dataclass
class GcgRun:
    records: list[IterateRecord] = field(default_factory=list)
    state: GcgState | None = None


def run(problem: MfgProblem, schedule: StepSchedule, n_iters: int, initial: FlowPair | None = None,
        callback: Callback | None = None, sigma_mode: str = "dual") -> GcgRun:
    """
    Run ``n_iters`` steps from ``initial`` (default ``(m0, 0)`` constant in time).

    ``callback(record, belief, state)`` receives the belief the record was
    measured at and the state returned by the step, before the record is
    appended; it may fill record fields.
    """
    if n_iters < 1:
        raise ConfigError(f"n_iters must be >= 1, got {n_iters}")
    belief = FlowPair.stationary(problem) if initial is None else initial
    belief.validate()
    state = GcgState(belief)
    out = GcgRun(state=state)
    for k in range(n_iters):
        measured = state.belief
        try:
            state, record = gcg_step(problem, state, k, schedule, sigma_mode)
            if callback is not None:
                callback(record, measured, state)
        except MfgError as exc:
            raise GcgAborted(exc, out.records, out.state) from exc
        out.records.append(record)
        out.state = state
        logger.debug("k=%d delta=%.4g J=%.12g sigma=%.3e", k, record.delta_k,
                     record.potential_cost, record.exploitability)
    return out
