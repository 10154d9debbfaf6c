"""
Experiment configuration: a JSON document with four sections.

Example (every key optional; shown values are the defaults)::

    {
      "name": "default",
      "grid": {"dim": 1, "nx": 128, "nt": 128, "horizon": 1.0},
      "problem": {
        "viscosity": 1.0,
        "running_cost": {"kind": "quadratic", "weight": 1.0,
                         "potential": {"kind": "cosine", "amplitude": 0.25}},
        "kernel": {"gaussian_width": 3.0, "n_modes": 16},
        "price": {"base": [0.1], "gain": 0.5},
        "aggregation": [{"profile": {"kind": "cosine", "amplitude": 1.0, "shift": 0.25}, "axis": 0}],
        "m0": {"kind": "cosine", "base": 1.0, "amplitude": 0.5, "shift": 0.25},
        "g": {"kind": "cosine", "amplitude": 0.2, "shift": 0.1}
      },
      "run": {"schedule": "fw", "n_iters": 256, "reference_budget": 2560, "seed": 0,
              "output_dir": "out", "dump_fields": false},
      "monte_carlo": {"n_paths": 10000, "points": [[0.0], [0.3125], [0.703125]]}
    }

``running_cost.kind`` is ``quadratic`` (``weight/2 |v|^2 + potential``) or
``quartic`` (adds ``quartic/4 |v|^4``). ``kernel`` is either
``{"gaussian_width", "n_modes"}`` or ``{"fourier": [1.0, c1, ...]}``.
``aggregation`` has one entry per price component; entry ``i`` sets
``a[i, axis] = profile(x)``. ``reference_budget`` defaults to ``10 * n_iters``
and ``0`` disables the reference. ``monte_carlo.n_paths = 0`` disables the
cross-check.
"""

from __future__ import annotations

import copy
import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, MfgError
from .grid import TorusGrid
from .model import Custom, CouplingSpec, MfgProblem, QuadraticPlus, gaussian_coefficients
from .profiles import build_profile, sample_density

DEFAULT_MC_POINTS = ((0.0,), (0.3125,), (0.703125,))


def _default_cost() -> dict:
    return {"kind": "quadratic", "weight": 1.0, "potential": {"kind": "cosine", "amplitude": 0.25}}


def _default_aggregation() -> list:
    return [{"profile": {"kind": "cosine", "amplitude": 1.0, "shift": 0.25}, "axis": 0}]


@dataclass(frozen=True)
class GridSpec:
    dim: int = 1
    nx: int = 128
    nt: int = 128
    horizon: float = 1.0


@dataclass(frozen=True)
class ProblemSpec:
    viscosity: float = 1.0
    running_cost: dict = field(default_factory=_default_cost)
    kernel: dict = field(default_factory=lambda: {"gaussian_width": 3.0, "n_modes": 16})
    price: dict = field(default_factory=lambda: {"base": [0.1], "gain": 0.5})
    aggregation: list = field(default_factory=_default_aggregation)
    m0: dict = field(default_factory=lambda: {"kind": "cosine", "base": 1.0, "amplitude": 0.5, "shift": 0.25})
    g: dict = field(default_factory=lambda: {"kind": "cosine", "amplitude": 0.2, "shift": 0.1})


@dataclass(frozen=True)
class RunSpec:
    schedule: str = "fw"
    n_iters: int = 256
    reference_budget: int | None = None
    seed: int = 0
    output_dir: str = "out"
    dump_fields: bool = False


@dataclass(frozen=True)
class MonteCarloSpec:
    n_paths: int = 10000
    points: list | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description; see the module docstring for the schema."""

    name: str = "default"
    grid: GridSpec = field(default_factory=GridSpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    run: RunSpec = field(default_factory=RunSpec)
    monte_carlo: MonteCarloSpec = field(default_factory=MonteCarloSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def build_grid(self) -> TorusGrid:
        g = self.grid
        return TorusGrid(g.dim, g.nx, g.nt, g.horizon)

    def build_problem(self) -> MfgProblem:
        return build_problem(self)


# -- parsing ------------------------------------------------------------------------


def _coerce(section: str, name: str, value: Any, default: Any, annotation: str) -> Any:
    where = f"{section}.{name}" if section else name
    if annotation in ("int", "int | None"):
        if value is None and annotation == "int | None":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"field '{where}' must be an integer, got {value!r}")
        return int(value)
    if annotation == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{where}' must be a number, got {value!r}")
        return float(value)
    if annotation == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"field '{where}' must be true or false, got {value!r}")
        return value
    if annotation == "str":
        if not isinstance(value, str):
            raise ConfigError(f"field '{where}' must be a string, got {value!r}")
        return value
    if annotation == "dict":
        if not isinstance(value, Mapping):
            raise ConfigError(f"field '{where}' must be an object, got {value!r}")
        return copy.deepcopy(dict(value))
    if annotation in ("list", "list | None"):
        if value is None and annotation == "list | None":
            return None
        if not isinstance(value, list):
            raise ConfigError(f"field '{where}' must be a list, got {value!r}")
        return copy.deepcopy(value)
    return value


def _section(cls, section: str, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown field '{section}.{unknown[0]}' (expected one of {sorted(known)})")
    kwargs = {}
    for name, f in known.items():
        if name in raw:
            kwargs[name] = _coerce(section, name, raw[name], None, str(f.type))
    return cls(**kwargs)


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Build and validate a config from parsed JSON."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    sections = {"grid": GridSpec, "problem": ProblemSpec, "run": RunSpec, "monte_carlo": MonteCarloSpec}
    unknown = sorted(set(raw) - set(sections) - {"name"})
    if unknown:
        raise ConfigError(f"unknown field '{unknown[0]}' (expected name, {', '.join(sections)})")
    name = _coerce("", "name", raw.get("name", "default"), None, "str")
    parts = {key: _section(cls, key, raw.get(key)) for key, cls in sections.items()}
    run = parts["run"]
    if run.reference_budget is None:
        parts["run"] = RunSpec(**{**asdict(run), "reference_budget": 10 * run.n_iters})
    mc = parts["monte_carlo"]
    if mc.points is None:
        dim = parts["grid"].dim
        pts = [list(p) * dim for p in DEFAULT_MC_POINTS]
        parts["monte_carlo"] = MonteCarloSpec(mc.n_paths, pts)
    config = ExperimentConfig(name=name, **parts)
    validate(config)
    return config


def apply_overrides(raw: dict, iters: int | None = None, seed: int | None = None,
                    schedule: str | None = None, out: str | None = None) -> dict:
    """Return a copy of a raw config with command-line overrides applied."""
    raw = copy.deepcopy(raw)
    run = raw.setdefault("run", {})
    if not isinstance(run, dict):
        raise ConfigError("section 'run' must be an object")
    if iters is not None:
        run["n_iters"] = iters
    if seed is not None:
        run["seed"] = seed
    if schedule is not None:
        run["schedule"] = schedule
    if out is not None:
        run["output_dir"] = out
    return raw


def read_raw(path: str | Path) -> dict:
    """Parse a JSON config file, naming the line and column of a syntax error."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read, default-fill and validate a config; ``overrides`` go to :func:`apply_overrides`."""
    return config_from_dict(apply_overrides(read_raw(path), **overrides))


# -- validation and problem construction -----------------------------------------------


def validate(config: ExperimentConfig) -> None:
    """Check run settings, build the problem so every model invariant is enforced, and pre-check CFL."""
    from .gcg import StepSchedule

    run = config.run
    if run.n_iters < 1:
        raise ConfigError(f"run.n_iters must be >= 1, got {run.n_iters}")
    if run.reference_budget < 0:
        raise ConfigError(f"run.reference_budget must be >= 0, got {run.reference_budget}")
    if 0 < run.reference_budget < run.n_iters:
        raise ConfigError("run.reference_budget must be 0 (disabled) or >= run.n_iters")
    if run.seed < 0:
        raise ConfigError(f"run.seed must be >= 0, got {run.seed}")
    StepSchedule.parse(run.schedule)
    mc = config.monte_carlo
    if mc.n_paths < 0:
        raise ConfigError(f"monte_carlo.n_paths must be >= 0, got {mc.n_paths}")
    for p in mc.points:
        if not (isinstance(p, list) and len(p) == config.grid.dim
                and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)):
            raise ConfigError(f"monte_carlo.points entries must be lists of {config.grid.dim} numbers, got {p!r}")
    cfl_precheck(build_problem(config))


def _profile(spec: Any, where: str):
    if not isinstance(spec, Mapping):
        raise ConfigError(f"field '{where}' must be a profile object like {{\"kind\": \"cosine\"}}")
    try:
        return build_profile(spec)
    except ConfigError as exc:
        raise ConfigError(f"field '{where}': {exc}") from exc


def _running_cost(spec: Mapping[str, Any]):
    params = dict(spec)
    kind = params.pop("kind", "quadratic")
    potential = _profile(params.pop("potential", {"kind": "uniform", "value": 0.0}),
                         "problem.running_cost.potential")

    def offset(x, t):
        return potential(x) + 0.0 * np.asarray(t)

    weight = float(params.pop("weight", 1.0))
    if kind == "quadratic":
        if params:
            raise ConfigError(f"unknown field 'problem.running_cost.{sorted(params)[0]}'")
        return QuadraticPlus(weight, offset)
    if kind == "quartic":
        q = float(params.pop("quartic", 1.0))
        if params:
            raise ConfigError(f"unknown field 'problem.running_cost.{sorted(params)[0]}'")
        if not weight > 0 or q < 0:
            raise ConfigError("quartic running cost needs weight > 0 and quartic >= 0")
        return quartic_cost(weight, q, offset)
    raise ConfigError(f"unknown running cost kind {kind!r} (choose quadratic or quartic)")


def quartic_cost(weight: float, quartic: float, offset) -> Custom:
    """``weight/2 |v|^2 + quartic/4 |v|^4 + offset(x, t)``; strongly convex with modulus ``weight``."""

    def value(x, t, v):
        s = np.sum(v * v, axis=-1)
        return 0.5 * weight * s + 0.25 * quartic * s * s + offset(x, t)

    def grad(x, t, v):
        s = np.sum(v * v, axis=-1, keepdims=True)
        return (weight + quartic * s) * v

    def hess(x, t, v):
        s = np.sum(v * v, axis=-1)[..., None, None]
        eye = np.eye(v.shape[-1])
        return (weight + quartic * s) * eye + 2 * quartic * v[..., :, None] * v[..., None, :]

    return Custom(value, grad, weight, hess)


def _kernel(spec: Mapping[str, Any]) -> tuple[float, ...]:
    if "fourier" in spec:
        if set(spec) != {"fourier"}:
            raise ConfigError("problem.kernel takes either 'fourier' or 'gaussian_width'/'n_modes'")
        coeffs = spec["fourier"]
        if not isinstance(coeffs, list) or not coeffs:
            raise ConfigError("problem.kernel.fourier must be a nonempty list")
        return tuple(float(c) for c in coeffs)
    extra = set(spec) - {"gaussian_width", "n_modes"}
    if extra:
        raise ConfigError(f"unknown field 'problem.kernel.{sorted(extra)[0]}'")
    width = float(spec.get("gaussian_width", 3.0))
    if not width > 0:
        raise ConfigError("problem.kernel.gaussian_width must be positive")
    return gaussian_coefficients(width, int(spec.get("n_modes", 16)))


def _aggregation(entries: list, dim: int):
    profiles = []
    for i, entry in enumerate(entries):
        where = f"problem.aggregation[{i}]"
        if not isinstance(entry, Mapping) or "profile" not in entry:
            raise ConfigError(f"field '{where}' must be an object with a 'profile'")
        axis = entry.get("axis", 0)
        if isinstance(axis, bool) or not isinstance(axis, int) or not 0 <= axis < dim:
            raise ConfigError(f"field '{where}.axis' must be an integer in [0, {dim})")
        profiles.append((_profile(entry["profile"], where + ".profile"), axis))

    def aggregation(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (len(profiles), dim))
        for i, (prof, axis) in enumerate(profiles):
            out[..., i, axis] = prof(x)
        return out

    return aggregation


def build_problem(config: ExperimentConfig) -> MfgProblem:
    """Construct the problem; raises :class:`ConfigError` naming the violated invariant."""
    try:
        grid = config.build_grid()
        spec = config.problem
        cost = _running_cost(spec.running_cost)
        price = spec.price
        extra = set(price) - {"base", "gain"}
        if extra:
            raise ConfigError(f"unknown field 'problem.price.{sorted(extra)[0]}'")
        base = [float(b) for b in price.get("base", [0.1])]
        if len(base) != len(spec.aggregation) or not base:
            raise ConfigError(f"problem.price.base has {len(base)} components but "
                              f"problem.aggregation has {len(spec.aggregation)}")
        base_arr = np.asarray(base)

        def price_base(t):
            return np.broadcast_to(base_arr, np.shape(t) + base_arr.shape)

        coupling = CouplingSpec(_kernel(spec.kernel), price_base, float(price.get("gain", 0.5)),
                                _aggregation(spec.aggregation, grid.dim), len(base))
        m0_values = np.asarray(_profile(spec.m0, "problem.m0")(grid.points()), dtype=float)
        if not np.all(m0_values > 0):
            raise ConfigError("m0 not strictly positive")
        m0 = sample_density(grid, _profile(spec.m0, "problem.m0"))
        g = np.asarray(_profile(spec.g, "problem.g")(grid.points()), dtype=float)
        return MfgProblem(grid, cost, coupling, m0, g, spec.viscosity)
    except ConfigError:
        raise
    except (TypeError, ValueError, MfgError) as exc:
        raise ConfigError(f"invalid problem: {exc}") from exc


def cfl_precheck(problem: MfgProblem) -> dict:
    """
    CFL number of the first best response, from the couplings of the initial belief.

    Raises :class:`~mfg_gcg.errors.CflError` naming the bound when it exceeds 1.
    The solvers re-check the bound at every iteration.
    """
    from .fokker_planck import FlowPair
    from .gcg import predict_couplings
    from .hjb import solve_with_control

    grid = problem.grid
    coupling = predict_couplings(problem, FlowPair.stationary(problem))
    _, control = solve_with_control(problem, coupling, check_cfl=True)
    # the terminal level never drives the density update, so it is excluded
    vmax = float(np.max(np.abs(control.values[:-1])))
    return {"vmax": vmax, "cfl_number": grid.dt * vmax / grid.dx, "bound": 1.0}
