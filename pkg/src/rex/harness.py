"""Experiment drivers behind ``rex run``.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns a
:class:`Report`: named CSV tables whose rows are produced in a fixed order
from seeded randomness, so re-running a config gives byte-identical files.
The study functions (:func:`ode_order_study`, :func:`strong_order_study`,
:func:`equivalence_delta`, ...) are also the building blocks of the test
suite.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .baselines import (
    BaselineKind,
    BaselineTag,
    ddim_sde_eta,
    ddim_step,
    dpm1_step,
    dpmpp1_step,
    dpmpp_2s_step,
    sde_dpm1_step,
    sde_dpmpp1_step,
)
from .brownian import BrownianIncrement, BrownianPath, GridIncrements
from .models import GaussianDataModel, GaussianMixtureModel, PredictionModel, exact_flow, reference_flow
from .schedules import DEFAULT_EPS, NoiseSchedule, Parameterization, ScheduleKind, TimeGrid
from .solver import (
    DEFAULT_ZETA,
    VARIANTS,
    Dynamics,
    RexConfig,
    format_float,
    invert,
    max_ulp_error,
    psi_solve,
    psi_step,
    solve,
)
from .stability import StabilityMethod, empirical_stability, scan
from .tableaux import ODE_BUILTINS, SDE_BUILTINS, ButcherTableau, builtin, generic2

__all__ = [
    "EQUIVALENCE_BASELINES",
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "ModelSpec",
    "OrderStudy",
    "Report",
    "ScheduleSpec",
    "Table",
    "equivalence_delta",
    "fitted_slope",
    "ode_order_study",
    "psi_full_step",
    "run",
    "run_brownian_stats",
    "run_convergence",
    "run_equivalence",
    "run_roundtrip",
    "run_stability",
    "strong_order_study",
    "write_report",
]

EXPERIMENTS = ("convergence", "stability", "roundtrip", "equivalence", "brownian_stats")
EQUIVALENCE_BASELINES = (
    "dpm1",
    "dpmpp1",
    "sde_dpm1",
    "sde_dpmpp1",
    "dpmpp_2s(1/2)",
    "dpmpp_2s(2/3)",
    "dpmpp_2s(1)",
    "ddim_stoch",
)
_SEED_LIMIT = 1 << 64


class ConfigError(ValueError):
    """An experiment config that names unknown objects or has invalid values."""


# --------------------------------------------------------------------- config
@dataclass(frozen=True)
class ScheduleSpec:
    """Schedule by name with discrete hyperparameters; ``None`` keeps the factory default."""

    name: str = "linear"
    beta_hat0: float | None = None
    beta_hat1: float | None = None
    n_train: int = 1000
    eps: float = DEFAULT_EPS

    def build(self) -> NoiseSchedule:
        return NoiseSchedule.from_name(self.name, self.beta_hat0, self.beta_hat1, self.n_train, self.eps)


@dataclass(frozen=True)
class ModelSpec:
    """Analytic model: ``gaussian`` (``mu``, ``s``) or ``mixture`` (``weights``, ``means``, ``stds``)."""

    kind: str = "gaussian"
    mu: tuple[float, ...] = (0.0,)
    s: float = 1.0
    weights: tuple[float, ...] = ()
    means: tuple[tuple[float, ...], ...] = ()
    stds: tuple[float, ...] = ()
    parameterization: str = "data"

    @property
    def dim(self) -> int:
        return len(self.mu) if self.kind == "gaussian" else len(self.means[0])

    def build(
        self,
        schedule: NoiseSchedule,
        dim: int | None = None,
        parameterization: Parameterization | str | None = None,
    ) -> PredictionModel:
        """Instantiate; a one-entry ``mu`` is broadcast to ``dim``."""
        param = Parameterization(parameterization or self.parameterization)
        d = self.dim if dim is None else int(dim)
        if self.kind == "gaussian":
            mu = np.asarray(self.mu, dtype=np.float64)
            if mu.size == 1:
                mu = np.full(d, float(mu[0]))
            elif mu.size != d:
                raise ConfigError(f"model mu has {mu.size} entries, need {d}")
            return GaussianDataModel(schedule, mu, self.s, param)
        if self.dim != d:
            raise ConfigError(f"mixture means have dimension {self.dim}, need {d}")
        return GaussianMixtureModel(schedule, self.weights, self.means, self.stds, param)


def _tuple(value: Any, cast: Callable[[Any], Any]) -> tuple:
    if isinstance(value, (str, bytes)) or not isinstance(value, Iterable):
        raise ConfigError(f"expected a list, got {value!r}")
    return tuple(cast(v) for v in value)


def _spec_from_dict(cls: type, data: Any, label: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{label} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {label} field(s): {', '.join(unknown)}")
    return dict(data)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  JSON keys mirror the field names.

    ``tableaux``, ``baselines`` and ``n_steps`` default per experiment when
    left empty.  ``n_seeds`` counts seeds (strong order, round trip);
    ``cases`` counts random equivalence cases; ``samples`` is the Brownian
    sample size.
    """

    experiment: str
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    tableaux: tuple[str, ...] = ()
    baselines: tuple[str, ...] = ()
    n_steps: tuple[int, ...] = ()
    zeta: float = DEFAULT_ZETA
    seed: int = 0
    dynamics: str = "ode"
    tail_fallback: bool = False
    dims: tuple[int, ...] = ()
    n_seeds: int = 1
    cases: int = 100
    refine: int = 128
    reference_steps: int = 20_000
    samples: int = 100_000
    tolerance: float | None = None
    real_range: tuple[float, float] = (-3.0, 1.0)
    imag_range: tuple[float, float] = (-3.0, 3.0)
    grid_points: int = 41
    n_iters: int = 1000
    band: float = 0.05
    real_points: tuple[float, ...] = (-0.01, -0.1, -0.5)
    output: str | None = None

    def __post_init__(self) -> None:
        self._validate()

    # ---------------------------------------------------------------- parsing
    @classmethod
    def from_dict(cls, data: Mapping[str, Any], experiment: str | None = None) -> "ExperimentConfig":
        """Build from parsed JSON; ``experiment`` fills in or must match the field."""
        raw = _spec_from_dict(cls, data, "config")
        if experiment is not None:
            if raw.setdefault("experiment", experiment) != experiment:
                raise ConfigError(f"config is for {raw['experiment']!r}, not {experiment!r}")
        if "experiment" not in raw:
            raise ConfigError("config needs an 'experiment' field")
        try:
            if "schedule" in raw:
                raw["schedule"] = ScheduleSpec(**_spec_from_dict(ScheduleSpec, raw["schedule"], "schedule"))
            if "model" in raw:
                m = _spec_from_dict(ModelSpec, raw["model"], "model")
                for key in ("mu", "weights", "stds"):
                    if key in m:
                        m[key] = _tuple(m[key], float)
                if "means" in m:
                    m["means"] = tuple(_tuple(row, float) for row in _tuple(m["means"], lambda r: r))
                raw["model"] = ModelSpec(**m)
            for key, cast in (
                ("tableaux", str),
                ("baselines", str),
                ("n_steps", int),
                ("dims", int),
                ("real_range", float),
                ("imag_range", float),
                ("real_points", float),
            ):
                if key in raw:
                    raw[key] = _tuple(raw[key], cast)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return cls(**raw)

    @classmethod
    def from_json(cls, path: str | Path, experiment: str | None = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, experiment)

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # ---------------------------------------------------------------- checks
    def _validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        try:
            ScheduleKind(self.schedule.name)
            self.schedule.build()
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from exc
        self._validate_model()
        if self.dynamics not in ("ode", "sde"):
            raise ConfigError(f"dynamics must be 'ode' or 'sde', got {self.dynamics!r}")
        for name in self.tableaux:
            try:
                builtin(name)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"tableau: {exc}") from exc
        for name in self.baselines:
            try:
                BaselineKind.parse(name)
            except ValueError as exc:
                raise ConfigError(f"baseline: {exc}") from exc
        if any(n < 1 for n in self.n_steps):
            raise ConfigError("n_steps entries must be positive")
        if any(b <= a for a, b in zip(self.n_steps, self.n_steps[1:])):
            raise ConfigError("n_steps must be strictly increasing")
        if any(d < 1 for d in self.dims):
            raise ConfigError("dims entries must be positive")
        if not 0.0 < self.zeta < 1.0:
            raise ConfigError(f"zeta must lie in (0, 1), got {self.zeta}")
        if not 0 <= self.seed < _SEED_LIMIT:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for key in ("n_seeds", "cases", "refine", "reference_steps", "samples", "grid_points"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.n_iters < 1000:
            raise ConfigError("n_iters must be at least 1000")
        for key in ("real_range", "imag_range"):
            lo_hi = getattr(self, key)
            if len(lo_hi) != 2 or not lo_hi[0] < lo_hi[1]:
                raise ConfigError(f"{key} must be [lo, hi] with lo < hi")
        if self.band < 0.0:
            raise ConfigError("band must be non-negative")
        if self.tolerance is not None and not self.tolerance > 0.0:
            raise ConfigError("tolerance must be positive")
        if self.experiment == "convergence":
            sde = self.dynamics == "sde"
            for tab in self.resolved_tableaux:
                if builtin(tab).is_stochastic != sde:
                    raise ConfigError(f"tableau {tab} does not match dynamics {self.dynamics}")
            if sde:
                finest = self.resolved_n_steps[-1] * self.refine
                if any(finest % n for n in self.resolved_n_steps):
                    raise ConfigError("every n_steps entry must divide max(n_steps) * refine")
        if self.experiment == "equivalence":
            for name in self.resolved_baselines:
                _equivalence_route(BaselineKind.parse(name))

    def _validate_model(self) -> None:
        m = self.model
        if m.kind not in ("gaussian", "mixture"):
            raise ConfigError(f"model kind must be 'gaussian' or 'mixture', got {m.kind!r}")
        try:
            Parameterization(m.parameterization)
            if m.kind == "gaussian" and not m.mu:
                raise ConfigError("gaussian model needs a non-empty mu")
            if m.kind == "mixture" and not m.means:
                raise ConfigError("mixture model needs means")
            m.build(self.schedule.build())
        except ConfigError:
            raise
        except (ValueError, TypeError, IndexError) as exc:
            raise ConfigError(f"model: {exc}") from exc

    # ---------------------------------------------------------------- defaults
    @property
    def resolved_tableaux(self) -> tuple[str, ...]:
        if self.tableaux:
            return self.tableaux
        if self.experiment == "convergence":
            return ("euler_maruyama", "shark") if self.dynamics == "sde" else ("euler", "midpoint", "rk4")
        if self.experiment == "stability":
            return ("euler",)
        return ODE_BUILTINS + SDE_BUILTINS

    @property
    def resolved_baselines(self) -> tuple[str, ...]:
        if self.baselines:
            return self.baselines
        if self.experiment == "stability":
            return ("bdia", "obelm")
        return EQUIVALENCE_BASELINES

    @property
    def resolved_n_steps(self) -> tuple[int, ...]:
        if self.n_steps:
            return self.n_steps
        if self.experiment == "roundtrip":
            return (1, 10, 100)
        if self.dynamics == "sde":
            return (8, 16, 32, 64)
        return (10, 20, 40, 80, 160)

    @property
    def resolved_dims(self) -> tuple[int, ...]:
        return self.dims or (self.model.dim,)

    def seeds(self) -> list[int]:
        """``n_seeds`` consecutive seeds starting at ``seed`` (mod 2**64)."""
        return [(self.seed + k) % _SEED_LIMIT for k in range(self.n_seeds)]


# --------------------------------------------------------------------- reports
@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: list[tuple]


Report = dict[str, Table]


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def write_report(report: Report, out_dir: str | Path) -> list[Path]:
    """Write each table to ``<out_dir>/<name>.csv``; returns the paths in name order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(report):
        table = report[name]
        path = out / f"{name}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(table.columns)
            for row in table.rows:
                writer.writerow([_cell(v) for v in row])
        paths.append(path)
    return paths


# --------------------------------------------------------------------- order studies
@dataclass(frozen=True)
class OrderStudy:
    n_steps: tuple[int, ...]
    errors: tuple[float, ...]
    slope: float


def fitted_slope(n_steps: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares order ``p`` in ``error ~ C N^-p``; ``nan`` if an error is not positive."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size < 2 or np.any(~(e > 0.0)) or np.any(~np.isfinite(e)):
        return float("nan")
    return float(-np.polyfit(np.log(np.asarray(n_steps, dtype=np.float64)), np.log(e), 1)[0])


def _as_tableau(tableau: ButcherTableau | str) -> ButcherTableau:
    return builtin(tableau) if isinstance(tableau, str) else tableau


def ode_order_study(
    model: PredictionModel,
    tableau: ButcherTableau | str,
    n_steps: Sequence[int],
    x_T: ArrayLike,
    zeta: float = DEFAULT_ZETA,
    reference_steps: int = 20_000,
) -> OrderStudy:
    """Terminal error of the Rex ODE solve from ``t = 1`` to ``eps`` against the flow oracle.

    A :class:`GaussianDataModel` uses its closed-form flow; any other model
    uses a fine classical RK4 solve with ``reference_steps`` steps.
    """
    x = np.asarray(x_T, dtype=np.float64)
    eps = model.schedule.eps
    if isinstance(model, GaussianDataModel):
        ref = exact_flow(model, 1.0, eps, x)
    else:
        ref = reference_flow(model, 1.0, eps, x, reference_steps)
    tab = _as_tableau(tableau)
    errors = []
    for n in n_steps:
        cfg = RexConfig.build(model, tab, n, Dynamics.ODE, zeta)
        errors.append(float(np.max(np.abs(solve(cfg, x).x_final - ref))))
    return OrderStudy(tuple(n_steps), tuple(errors), fitted_slope(n_steps, errors))


def strong_order_study(
    model: PredictionModel,
    tableau: ButcherTableau | str,
    n_steps: Sequence[int],
    x_T: ArrayLike,
    seeds: Sequence[int],
    refine: int = 128,
    zeta: float = DEFAULT_ZETA,
) -> OrderStudy:
    """Root-mean-square pathwise error of the Rex SDE solve.

    For every seed the reference is the ShARK scheme on a grid ``refine``
    times finer than the finest tested grid; the tested grids are nested in
    it and read increments from the same Brownian path.
    """
    x = np.asarray(x_T, dtype=np.float64)
    tab = _as_tableau(tableau)
    variant = VARIANTS[(Dynamics.SDE, Parameterization(model.parameterization))]
    fine_n = max(n_steps) * refine
    fine = TimeGrid.uniform(model.schedule, fine_n, variant.clock)
    points = fine.values ** 2 if variant.chi_squared_noise else fine.values
    sq = np.zeros(len(n_steps))
    for seed in seeds:
        path = BrownianPath(seed, x.size, (float(points.min()), float(points.max())), grid=points)
        ref_cfg = RexConfig(model, builtin("shark"), fine, Dynamics.SDE, zeta, seed=seed)
        ref = psi_solve(ref_cfg, x, GridIncrements(path, points))
        for i, n in enumerate(n_steps):
            stride = fine_n // n
            grid = fine.subsample(stride)
            cfg = RexConfig(model, tab, grid, Dynamics.SDE, zeta, seed=seed)
            inc = GridIncrements(path, points[::stride])
            sq[i] += float(np.sum((solve(cfg, x, inc).x_final - ref) ** 2))
    errors = tuple(float(v) for v in np.sqrt(sq / len(seeds)))
    return OrderStudy(tuple(n_steps), errors, fitted_slope(n_steps, errors))


def _initial_state(seed: int, dim: int) -> NDArray[np.float64]:
    return np.random.default_rng(seed).normal(size=dim)


def run_convergence(config: ExperimentConfig) -> Report:
    """Columns: tableau, n_steps, h (physical step), error, slope (per tableau)."""
    schedule = config.schedule.build()
    model = config.model.build(schedule)
    x = _initial_state(config.seed, config.model.dim)
    n_list = config.resolved_n_steps
    rows = []
    for name in config.resolved_tableaux:
        if config.dynamics == "sde":
            study = strong_order_study(model, name, n_list, x, config.seeds(), config.refine, config.zeta)
        else:
            study = ode_order_study(model, name, n_list, x, config.zeta, config.reference_steps)
        for n, err in zip(study.n_steps, study.errors):
            rows.append((name, n, (1.0 - schedule.eps) / n, err, study.slope))
    return {"convergence": Table(("tableau", "n_steps", "h", "error", "slope"), rows)}


# --------------------------------------------------------------------- stability
def run_stability(config: ExperimentConfig) -> Report:
    """Tables ``stability_grid`` (per point), ``stability_baselines`` and ``stability_summary``."""
    real = np.linspace(*config.real_range, config.grid_points)
    imag = np.linspace(*config.imag_range, config.grid_points)
    tableau = config.resolved_tableaux[0]
    result = scan(real, imag, config.zeta, tableau, config.n_iters, config.band)
    grid_rows = []
    for i in range(imag.size):
        for j in range(real.size):
            g = complex(result.gamma[i, j])
            grid_rows.append(
                (
                    float(real[j]),
                    float(imag[i]),
                    g.real,
                    g.imag,
                    abs(g),
                    bool(result.gamma_stable[i, j]),
                    bool(result.bounded[i, j]),
                    bool(result.near_contour[i, j]),
                    float(result.radius[i, j]),
                )
            )
    base_rows = []
    for name in config.resolved_baselines:
        method = StabilityMethod(BaselineKind.parse(name).tag.value)
        for z in config.real_points:
            base_rows.append((method.value, z, config.n_iters, empirical_stability(method, z, config.zeta, config.n_iters)))
    summary = [
        ("tableau", result.tableau),
        ("zeta", config.zeta),
        ("n_iters", config.n_iters),
        ("off_band_points", int((~result.near_contour).sum())),
        ("gamma_agreement", result.agreement),
        ("radius_agreement", result.radius_agreement),
    ]
    return {
        "stability_grid": Table(
            ("re", "im", "gamma_re", "gamma_im", "gamma_abs", "gamma_stable", "bounded", "near_contour", "radius"),
            grid_rows,
        ),
        "stability_baselines": Table(("method", "z", "n_iters", "bounded"), base_rows),
        "stability_summary": Table(("quantity", "value"), summary),
    }


# --------------------------------------------------------------------- round trip
def run_roundtrip(config: ExperimentConfig) -> Report:
    """Solve then invert over every variant, tableau, ``N`` and dimension.

    Columns: dynamics, parameterization, tableau, n_steps, dim, seed,
    ulps_x, ulps_x_hat, pass (both within ``tolerance`` ulps, default 100).
    """
    tol = 100.0 if config.tolerance is None else config.tolerance
    schedule = config.schedule.build()
    rows = []
    for dynamics in (Dynamics.ODE, Dynamics.SDE):
        names = [n for n in config.resolved_tableaux if builtin(n).is_stochastic == (dynamics is Dynamics.SDE)]
        for param in (Parameterization.DATA, Parameterization.NOISE):
            for name in names:
                for n in config.resolved_n_steps:
                    for dim in config.resolved_dims:
                        model = config.model.build(schedule, dim, param)
                        for seed in config.seeds():
                            cfg = RexConfig.build(
                                model,
                                name,
                                n,
                                dynamics,
                                config.zeta,
                                config.tail_fallback,
                                seed if dynamics is Dynamics.SDE else None,
                            )
                            x = _initial_state(seed, dim)
                            back = invert(cfg, solve(cfg, x).state(-1))
                            ux = max_ulp_error(back.x[0], x)
                            uh = max_ulp_error(back.x_hat[0], x)
                            rows.append((dynamics.value, param.value, name, n, dim, seed, ux, uh, ux <= tol and uh <= tol))
    columns = ("dynamics", "parameterization", "tableau", "n_steps", "dim", "seed", "ulps_x", "ulps_x_hat", "pass")
    return {"roundtrip": Table(columns, rows)}


# --------------------------------------------------------------------- equivalence
def psi_full_step(
    model: PredictionModel,
    tableau: ButcherTableau | str,
    dynamics: Dynamics | str,
    t_n: float,
    t_p: float,
    x: ArrayLike,
    increment: BrownianIncrement | None = None,
) -> NDArray[np.float64]:
    """One step ``x+ = (w+/w_n) x + w+ Psi_h(s_n, x)`` between physical times ``t_n > t_p``."""
    dyn = Dynamics(dynamics)
    clock = VARIANTS[(dyn, Parameterization(model.parameterization))].clock
    sch = model.schedule
    grid = TimeGrid(clock, np.array([t_n, t_p]), np.array([float(sch.clock(clock, t_n)), float(sch.clock(clock, t_p))]))
    cfg = RexConfig(model, _as_tableau(tableau), grid, dyn, seed=0 if dyn is Dynamics.SDE else None)
    w_n, w_p = (float(w) for w in cfg.weights)
    s_n, s_p = (float(v) for v in grid.values)
    xv = np.asarray(x, dtype=np.float64)
    return (w_p / w_n) * xv + w_p * psi_step(cfg, s_n, xv, s_p - s_n, increment, None, w_n, s_p)


def _equivalence_route(kind: BaselineKind) -> tuple[ButcherTableau, Dynamics, Parameterization]:
    tag = kind.tag
    if tag is BaselineTag.DPMPP1:
        return builtin("euler"), Dynamics.ODE, Parameterization.DATA
    if tag in (BaselineTag.DPM1, BaselineTag.DDIM_DET):
        return builtin("euler"), Dynamics.ODE, Parameterization.NOISE
    if tag is BaselineTag.DPMPP_2S:
        return generic2(kind.param), Dynamics.ODE, Parameterization.DATA  # type: ignore[arg-type]
    if tag is BaselineTag.SDE_DPMPP1 or (tag is BaselineTag.DDIM_STOCH and kind.param is None):
        return builtin("euler_maruyama"), Dynamics.SDE, Parameterization.DATA
    if tag is BaselineTag.SDE_DPM1:
        return builtin("euler_maruyama"), Dynamics.SDE, Parameterization.NOISE
    raise ConfigError(f"{kind.name} has no single-step Psi counterpart")


def _with_parameterization(model: PredictionModel, param: Parameterization) -> PredictionModel:
    return dataclasses.replace(model, parameterization=param)  # type: ignore[type-var]


def _relative_delta(a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    scale = float(np.max(np.abs(b)))
    return float(np.max(np.abs(a - b))) / (scale if scale > 0.0 else 1.0)


def equivalence_delta(
    kind: BaselineKind | str,
    model: PredictionModel,
    t_n: float,
    t_p: float,
    x: ArrayLike,
    noise: ArrayLike | None = None,
) -> float:
    """Relative max-norm gap between the Psi full step and the closed-form baseline step.

    Stochastic steps share the standard normal ``noise``: the Psi step gets
    ``W = sqrt(clock variance) * noise`` and ``H = 0``.
    """
    k = BaselineKind.parse(kind) if isinstance(kind, str) else kind
    tableau, dynamics, param = _equivalence_route(k)
    m = _with_parameterization(model, param)
    sch = m.schedule
    xv = np.asarray(x, dtype=np.float64)
    inc = None
    if dynamics is Dynamics.SDE:
        z = np.asarray(noise, dtype=np.float64)
        if param is Parameterization.DATA:
            var = float(sch.clock("rho", t_p)) - float(sch.clock("rho", t_n))
        else:
            var = float(sch.clock("chi", t_n)) ** 2 - float(sch.clock("chi", t_p)) ** 2
        inc = BrownianIncrement(math.sqrt(var) * z, np.zeros_like(z), var)
    ours = psi_full_step(m, tableau, dynamics, t_n, t_p, xv, inc)
    tag = k.tag
    if tag is BaselineTag.DPMPP1:
        ref = dpmpp1_step(sch, m, t_n, t_p, xv)
    elif tag in (BaselineTag.DPM1, BaselineTag.DDIM_DET):
        ref = dpm1_step(sch, m, t_n, t_p, xv) if tag is BaselineTag.DPM1 else ddim_step(sch, m, t_n, t_p, xv)
    elif tag is BaselineTag.DPMPP_2S:
        ref = dpmpp_2s_step(sch, m, t_n, t_p, xv, float(k.param))  # type: ignore[arg-type]
    elif tag is BaselineTag.SDE_DPMPP1:
        ref = sde_dpmpp1_step(sch, m, t_n, t_p, xv, noise)  # type: ignore[arg-type]
    elif tag is BaselineTag.DDIM_STOCH:
        ref = ddim_step(sch, m, t_n, t_p, xv, ddim_sde_eta(sch, t_n, t_p), noise)
    else:
        ref = sde_dpm1_step(sch, m, t_n, t_p, xv, noise)  # type: ignore[arg-type]
    return _relative_delta(ours, ref)


def run_equivalence(config: ExperimentConfig) -> Report:
    """Random ``(t_n > t_p, x, noise)`` cases per baseline; pass at ``tolerance`` (default 1e-12)."""
    tol = 1e-12 if config.tolerance is None else config.tolerance
    schedule = config.schedule.build()
    model = config.model.build(schedule)
    dim = config.model.dim
    rows, summary = [], []
    for b_index, name in enumerate(config.resolved_baselines):
        kind = BaselineKind.parse(name)
        rng = np.random.default_rng([config.seed, b_index])
        worst = 0.0
        for case in range(config.cases):
            t_a, t_b = rng.uniform(schedule.eps, 1.0, size=2)
            t_n, t_p = float(max(t_a, t_b)), float(min(t_a, t_b))
            x = 1.5 * rng.normal(size=dim)
            z = rng.normal(size=dim)
            delta = equivalence_delta(kind, model, t_n, t_p, x, z)
            worst = max(worst, delta)
            rows.append((kind.name, case, t_n, t_p, delta, delta <= tol))
        summary.append((kind.name, config.cases, worst, worst <= tol))
    return {
        "equivalence": Table(("baseline", "case", "t_n", "t_p", "rel_delta", "pass"), rows),
        "equivalence_summary": Table(("baseline", "cases", "max_rel_delta", "pass"), summary),
    }


# --------------------------------------------------------------------- Brownian statistics
def run_brownian_stats(config: ExperimentConfig) -> Report:
    """Replay determinism, dyadic additivity and the law of ``(W, H)``.

    ``samples`` independent components are drawn from one path over
    ``[0, 1]``; the statistics are taken over an off-grid interval so the
    bridge refinement is exercised.
    """
    seed, n = config.seed, config.samples
    rng = np.random.default_rng([seed, 1])
    probe = [tuple(sorted(rng.uniform(0.0, 1.0, size=2))) for _ in range(32)]
    a, b = BrownianPath(seed, 4, (0.0, 1.0)), BrownianPath(seed, 4, (0.0, 1.0))
    replay_mismatch = 0
    for s, t in probe:
        for p, q in ((a.query(s, t), b.query(s, t)), (a.query(s, t), a.query(s, t))):
            replay_mismatch += int(not (np.array_equal(p.W, q.W) and np.array_equal(p.H, q.H)))
    add_gap = 0.0
    for depth in range(1, 9):
        for k in range(0, 1 << depth, max(1, (1 << depth) // 8)):
            lo, hi = k / (1 << depth), (k + 1) / (1 << depth)
            mid = 0.5 * (lo + hi)
            whole = a.query(lo, hi).W
            parts = a.query(lo, mid).W + a.query(mid, hi).W
            add_gap = max(add_gap, float(np.max(np.abs(whole - parts))))
    big = BrownianPath(seed, n, (0.0, 1.0))
    s, t = 0.1875, 0.8125
    inc = big.query(s, t)
    h = inc.h
    w_var = float(np.var(inc.W))
    h_var = float(np.var(inc.H))
    corr = float(np.corrcoef(inc.W, inc.H)[0, 1])
    rows = [
        ("replay_mismatches", float(replay_mismatch), 0.0, replay_mismatch == 0),
        ("dyadic_additivity_gap", add_gap, 0.0, add_gap == 0.0),
        ("w_variance_rel_error", abs(w_var / h - 1.0), 0.05, abs(w_var / h - 1.0) <= 0.05),
        ("h_variance_rel_error", abs(h_var / (h / 12.0) - 1.0), 0.05, abs(h_var / (h / 12.0) - 1.0) <= 0.05),
        ("abs_corr_w_h", abs(corr), 0.01, abs(corr) < 0.01),
    ]
    return {"brownian_stats": Table(("check", "measured", "threshold", "pass"), rows)}


# --------------------------------------------------------------------- dispatch
_RUNNERS: dict[str, Callable[[ExperimentConfig], Report]] = {
    "convergence": run_convergence,
    "stability": run_stability,
    "roundtrip": run_roundtrip,
    "equivalence": run_equivalence,
    "brownian_stats": run_brownian_stats,
}


def run(config: ExperimentConfig) -> Report:
    return _RUNNERS[config.experiment](config)
