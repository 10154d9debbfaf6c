"""
Acceptance suite on the default desk-scale problem (d=1, nx=nt=128, T=1, nu=1).

Each criterion prints one ``PASS``/``FAIL`` line and then asserts, so the
full table appears in ``pytest -v`` output even when a criterion fails.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from mfg_gcg import diagnostics as diag
from mfg_gcg import gcg
from mfg_gcg.cli import run_experiment
from mfg_gcg.config import config_from_dict
from mfg_gcg.fokker_planck import FlowPair, solve_fp
from mfg_gcg.gcg import StepSchedule
from mfg_gcg.grid import ScalarField, TorusGrid, VectorField
from mfg_gcg.hjb import CouplingState, solve_hjb
from mfg_gcg.model import Custom, Hamiltonian, QuadraticPlus
from mfg_gcg.profiles import default_problem

from conftest import constant_aggregation, decoupled_problem

N_ITERS = 256
REFERENCE_BUDGET = 2560
WINDOW = (16, 256)


def report(capsys, criterion: int, label: str, passed: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {criterion:2d}] {'PASS' if passed else 'FAIL'} {label}: {detail}")


@pytest.fixture(scope="module")
def problem():
    return default_problem(nx=128, nt=128)


@pytest.fixture(scope="module")
def reference(problem):
    t0 = time.perf_counter()
    ref = diag.make_reference(problem, REFERENCE_BUDGET)
    return ref, time.perf_counter() - t0


def tracked_run(problem, ref, kind):
    beliefs_ok = []

    def callback(record, measured, state):
        tracker(record, measured, state)
        beliefs_ok.append(_mass_and_positivity(problem, measured))

    tracker = diag.DeviationTracker(problem, ref)
    t0 = time.perf_counter()
    result = gcg.run(problem, StepSchedule(kind), N_ITERS, callback=callback)
    return result, time.perf_counter() - t0, beliefs_ok


@pytest.fixture(scope="module")
def fw_run(problem, reference):
    return tracked_run(problem, reference[0], "frank_wolfe")


@pytest.fixture(scope="module")
def fp_run(problem, reference):
    return tracked_run(problem, reference[0], "fictitious_play")


def _mass_and_positivity(problem, pair: FlowPair) -> bool:
    mass = problem.grid.integrate(pair.m.values)
    return bool(np.max(np.abs(mass - 1.0)) <= 1e-10 and np.min(pair.m.values) > 0)


def _smooth_drift(grid, amplitude, rng):
    x = grid.axis()
    t = grid.times()[:, None]
    out = np.zeros(grid.vector_shape)
    for k in range(1, 4):
        a, b, c = rng.standard_normal(3)
        out[:, 0] += (a * np.cos(2 * np.pi * k * x + c * t) + b * np.sin(2 * np.pi * k * x)) / k
    return amplitude * out / np.max(np.abs(out))


# -- 1 ------------------------------------------------------------------------------


def _quartic_cost():
    def value(x, t, v):
        s = np.sum(v * v, axis=-1)
        return 0.5 * s + 0.25 * s * s + 0.1 * np.cos(2 * np.pi * x[..., 0])

    def grad(x, t, v):
        return (1 + np.sum(v * v, axis=-1, keepdims=True)) * v

    return Custom(value, grad, 1.0)


def test_criterion_01_fenchel_suite(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_eq, worst_slack = 0.0, math.inf
    cases = [(QuadraticPlus(1.0, lambda x, t: 0.25 * np.cos(2 * np.pi * x[..., 0])), 1),
             (QuadraticPlus(0.5), 2), (_quartic_cost(), 1), (_quartic_cost(), 2)]
    for cost, d in cases:
        ham = Hamiltonian(cost)
        x, t = rng.random((1000, d)), rng.random(1000)
        p, v = 3 * rng.standard_normal((2, 1000, d))
        h, hp = ham(x, t, p)
        eq = h + cost.value(x, t, -hp) - np.sum(p * hp, axis=-1)
        gap = h + cost.value(x, t, v) + np.sum(p * v, axis=-1)
        slack = gap - 0.5 * cost.convexity_modulus * np.sum((v + hp) ** 2, axis=-1)
        worst_eq = max(worst_eq, float(np.max(np.abs(eq))))
        worst_slack = min(worst_slack, float(np.min(slack)))
    elapsed = time.perf_counter() - t0
    passed = worst_eq <= 1e-10 and worst_slack >= -1e-10 and elapsed < 1.0
    report(capsys, 1, "Fenchel equality/inequality", passed,
           f"max |equality| {worst_eq:.2e}, min slack {worst_slack:.2e}, {elapsed:.2f} s")
    assert passed


# -- 2 ------------------------------------------------------------------------------


def test_criterion_02_conservation_and_positivity(capsys, problem, fw_run):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    ok = True
    shadow_margin = math.inf
    for nx, nt in ((128, 128), (64, 128)):
        grid = TorusGrid(1, nx, nt)
        prob = default_problem(nx=nx, nt=nt)
        for _ in range(10):
            v = _smooth_drift(grid, 0.9 * grid.dx / grid.dt, rng)
            pair = solve_fp(prob, VectorField(grid, v))
            ok = ok and _mass_and_positivity(prob, pair)
            bound = prob.eps0 * np.exp(-grid.horizon * np.max(np.abs(grid.div(v)))) * 0.9
            shadow_margin = min(shadow_margin, float(np.min(pair.m.values) - bound))
    elapsed = time.perf_counter() - t0
    run_ok = all(fw_run[2])
    passed = ok and run_ok and shadow_margin >= 0 and elapsed < 5.0
    report(capsys, 2, "mass/positivity/maximum-principle shadow", passed,
           f"random drifts ok={ok}, {len(fw_run[2])} GCG beliefs ok={run_ok}, "
           f"min(m - shadow bound) {shadow_margin:.3e}, {elapsed:.2f} s")
    assert passed


# -- 3 ------------------------------------------------------------------------------


def test_criterion_03_oracle_equivalence(capsys):
    grid = TorusGrid(1, 128, 128)
    a0, c, cg = 0.8, 0.3, 0.1
    price = (0.3 + 0.4 * np.sin(3 * grid.times()))[:, None]
    prob = decoupled_problem(grid, g=np.full(128, cg), aggregation=constant_aggregation([[a0]]))
    value = solve_hjb(prob, CouplingState(ScalarField(grid, np.full(grid.scalar_shape, c)), price))
    oracle = np.empty(grid.nt + 1)
    oracle[-1] = cg
    for n in range(grid.nt - 1, -1, -1):
        oracle[n] = oracle[n + 1] + grid.dt * (c - 0.5 * (a0 * price[n, 0]) ** 2)
    hjb_err = float(np.max(np.abs(value.u.values - oracle[:, None])))

    nu = 1.0
    m0 = 1 + 0.5 * np.cos(2 * np.pi * grid.axis()) + 0.2 * np.sin(6 * np.pi * grid.axis())
    pair = solve_fp(decoupled_problem(grid, m0=m0, viscosity=nu), VectorField.zeros(grid))
    x = grid.axis()
    lam = lambda k: (2 / grid.dx**2) * (1 - np.cos(2 * np.pi * k * grid.dx))  # noqa: E731
    fp_err = 0.0
    for n in range(grid.nt + 1):
        f1 = (1 + grid.dt * nu * lam(1)) ** -n
        f3 = (1 + grid.dt * nu * lam(3)) ** -n
        expected = 1 + 0.5 * f1 * np.cos(2 * np.pi * x) + 0.2 * f3 * np.sin(6 * np.pi * x)
        fp_err = max(fp_err, float(np.max(np.abs(pair.m.values[n] - expected))))
    passed = hjb_err <= 1e-12 and fp_err <= 1e-12
    report(capsys, 3, "oracle equivalence", passed, f"HJB vs scalar recursion {hjb_err:.2e}, "
                                                    f"FP vs mode decay {fp_err:.2e}")
    assert passed


# -- 4 ------------------------------------------------------------------------------


def test_criterion_04_certificate_ordering(capsys, fw_run):
    records = fw_run[0].records
    bad = diag.certificate_violations(records, atol=1e-6)
    worst = max(r.primal_gap - r.exploitability for r in records)
    report(capsys, 4, "eps_k <= sigma_k + 1e-6", not bad,
           f"{len(records)} iterations, {len(bad)} violations, max(eps - sigma) {worst:.2e}")
    assert not bad


# -- 5 ------------------------------------------------------------------------------


def test_criterion_05_rates(capsys, fw_run, fp_run):
    fw_records, fw_time = fw_run[0].records, fw_run[1]
    eps_fit = diag.fit_rate(fw_records, "eps", WINDOW)
    sigma_fit = diag.fit_rate(fw_records, "sigma", WINDOW)
    eps_ok = -1.3 <= eps_fit.slope <= -0.8
    sigma_ok = -0.75 <= sigma_fit.slope <= -0.35
    scaled = [r.primal_gap * (r.k + 1) / math.log(r.k + 1) for r in fp_run[0].records
              if WINDOW[0] <= r.k <= WINDOW[1]]
    fp_spread = diag.spread(scaled)
    fp_ok = fp_spread <= 5.0
    time_ok = fw_time < 60.0
    report(capsys, 5, "FrankWolfe eps slope in [-1.3, -0.8]", eps_ok, f"slope {eps_fit.slope:.3f}")
    report(capsys, 5, "FrankWolfe sigma slope in [-0.75, -0.35]", sigma_ok, f"slope {sigma_fit.slope:.3f}")
    report(capsys, 5, "FictitiousPlay eps*(k+1)/ln(k+1) max/median <= 5", fp_ok,
           f"max/median {fp_spread:.2f} (eps slope {diag.fit_rate(fp_run[0].records, 'eps', WINDOW).slope:.3f})")
    report(capsys, 5, "256-iteration run < 60 s", time_ok, f"{fw_time:.1f} s")
    assert eps_ok and sigma_ok and fp_ok and time_ok


# -- 6 ------------------------------------------------------------------------------


def test_criterion_06_variable_convergence(capsys, fw_run):
    records = [r for r in fw_run[0].records if r.k >= 4]
    spreads = {}
    for name in gcg.DEVIATION_NAMES:
        ratios = [getattr(r, name) / math.sqrt(r.primal_gap) for r in records if r.primal_gap > 0]
        spreads[name] = diag.spread(ratios)
    passed = all(s <= 10.0 for s in spreads.values())
    report(capsys, 6, "deviation/sqrt(eps) max/median <= 10", passed,
           ", ".join(f"{k} {v:.2f}" for k, v in spreads.items()))
    assert passed


# -- 7 ------------------------------------------------------------------------------


def test_criterion_07_descent_inequality(capsys, fw_run):
    records = fw_run[0].records
    c_emp = diag.fit_descent_constant(records)
    bad = diag.descent_violations(records, c_emp)
    report(capsys, 7, "descent inequality", not bad, f"C_emp {c_emp:.4g}, {len(bad)} violations")
    assert not bad


# -- 8 ------------------------------------------------------------------------------


def test_criterion_08_monte_carlo(capsys, problem, reference):
    ref = reference[0]
    grid = problem.grid
    u0 = ref.value.u.values[0]
    t0 = time.perf_counter()
    lines, ok = [], True
    for i in (0, 40, 90):
        est, se = diag.monte_carlo_value(problem, ref.coupling, [i * grid.dx], 10_000, seed=0, value=ref.value)
        tol = 3 * se + 0.05 * (1 + abs(u0[i]))
        ok = ok and abs(est - u0[i]) <= tol
        lines.append(f"x={i * grid.dx:.4f}: |{est:.4f} - {u0[i]:.4f}| <= {tol:.4f}")
    elapsed = time.perf_counter() - t0
    passed = ok and elapsed < 30.0
    report(capsys, 8, "Monte Carlo cross-check", passed, "; ".join(lines) + f"; {elapsed:.1f} s")
    assert passed


# -- 9 ------------------------------------------------------------------------------


def test_criterion_09_reference_exploitability(capsys, reference):
    ref, elapsed = reference
    passed = ref.sigma <= 1e-5
    report(capsys, 9, "reference sigma <= 1e-5", passed,
           f"sigma {ref.sigma:.2e} at k={ref.best_k} of {ref.iterations}, built in {elapsed:.1f} s")
    assert passed


# -- 10 -----------------------------------------------------------------------------


def test_criterion_10_determinism(capsys, tmp_path):
    raw = {"name": "determinism", "run": {"n_iters": 32, "reference_budget": 64}, "monte_carlo": {"n_paths": 500}}
    config = config_from_dict(raw)
    a = run_experiment(config, tmp_path / "a")
    b = run_experiment(config, tmp_path / "b")
    same = (tmp_path / "a" / "iterates.csv").read_bytes() == (tmp_path / "b" / "iterates.csv").read_bytes()
    passed = same and a.status == b.status == 0
    report(capsys, 10, "byte-identical iterate logs", passed, f"identical={same}, status {a.status}/{b.status}")
    assert passed
