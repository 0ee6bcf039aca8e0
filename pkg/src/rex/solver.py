"""Lawson-wrapped Runge-Kutta steps and the reversible Rex wrapper.

Each (dynamics, parameterization) pair fixes a transformed clock ``s`` and an
exponential weight ``w`` such that ``x / w`` obeys a drift-only (ODE) or
additive-noise (SDE) equation in ``s`` whose drift is the model output.  An
explicit (stochastic) Runge-Kutta tableau applied in those coordinates gives
the increment ``Psi_h(s_n, x)``; the plain scheme is

    ``x_{n+1} = (w_{n+1} / w_n) x_n + w_{n+1} Psi_h(s_n, x_n)``.

Rex couples a primary state ``x`` with an auxiliary ``x_hat``:

    ``x_{n+1}     = (w_{n+1}/w_n)(zeta x_n + (1 - zeta) x_hat_n) + w_{n+1} Psi_h(s_n, x_hat_n)``
    ``x_hat_{n+1} = (w_{n+1}/w_n) x_hat_n - w_{n+1} Psi_{-h}(s_{n+1}, x_{n+1})``

and both lines can be solved for step ``n`` in closed form, which makes the
map exactly invertible.  For SDEs ``Psi_{-h}`` sees the time-reversed
increment ``(-W, H)``: reflecting a Brownian path in time negates ``W`` and
leaves the space-time Levy area unchanged.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple, Sequence, TextIO

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _dd
from .brownian import BrownianIncrement, GridIncrements
from .models import PredictionModel
from .schedules import ClockKind, NoiseSchedule, Parameterization, TimeGrid, weight_from_clock
from .tableaux import ButcherTableau, builtin

__all__ = [
    "DEFAULT_ZETA",
    "Dynamics",
    "NonFiniteStateError",
    "RexConfig",
    "RexState",
    "StageClampWarning",
    "StageTimeError",
    "Trajectory",
    "VARIANTS",
    "Variant",
    "format_float",
    "invert",
    "make_increments",
    "max_ulp_error",
    "psi_solve",
    "psi_step",
    "rex_backward_step",
    "rex_forward_step",
    "solve",
]

Array = NDArray[np.float64]

DEFAULT_ZETA = 0.999
_STAGE_RTOL = 1e-9


class Dynamics(str, Enum):
    ODE = "ode"
    SDE = "sde"


@dataclass(frozen=True)
class Variant:
    """Clock and weight bound to one (dynamics, parameterization) pair.

    ``drift_factor`` multiplies every drift coefficient; ``chi_squared_noise``
    marks the variant whose Brownian clock is ``chi**2``.
    """

    clock: ClockKind
    drift_factor: float
    chi_squared_noise: bool


VARIANTS: dict[tuple[Dynamics, Parameterization], Variant] = {
    (Dynamics.ODE, Parameterization.DATA): Variant(ClockKind.GAMMA, 1.0, False),
    (Dynamics.ODE, Parameterization.NOISE): Variant(ClockKind.CHI, 1.0, False),
    (Dynamics.SDE, Parameterization.DATA): Variant(ClockKind.RHO, 1.0, False),
    (Dynamics.SDE, Parameterization.NOISE): Variant(ClockKind.CHI, 2.0, True),
}


class StageTimeError(ValueError):
    """A stage clock value maps outside ``[eps, 1]`` by more than rounding."""


class StageClampWarning(RuntimeWarning):
    """A stage time fell below ``eps`` and was clamped onto it."""


class NonFiniteStateError(FloatingPointError):
    """A solver state became non-finite; ``step`` is the offending step index."""

    def __init__(self, step: int, which: str) -> None:
        super().__init__(f"non-finite {which} after step {step}")
        self.step = step
        self.which = which


@dataclass(frozen=True, eq=False)
class RexConfig:
    """Everything a Rex solve needs besides the initial state.

    The grid must be expressed in the clock of the variant; use
    :meth:`build` to get a uniform-in-time grid in the right clock.

    ``compensated`` carries the Rex states in double-double so that inversion
    recovers them to float64 precision even where a step contracts the state
    by many orders of magnitude (the last step of a data-prediction SDE
    shrinks ``x`` by about ``1e-7``, which a float64 state cannot undo).
    """

    model: PredictionModel
    tableau: ButcherTableau
    grid: TimeGrid
    dynamics: Dynamics = Dynamics.ODE
    zeta: float = DEFAULT_ZETA
    tail_fallback: bool = False
    seed: int | None = None
    compensated: bool = True
    weights: Array = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "dynamics", Dynamics(self.dynamics))
        if not 0.0 < self.zeta < 1.0:
            raise ValueError(f"zeta must lie in (0, 1), got {self.zeta}")
        if self.tableau.is_stochastic != (self.dynamics is Dynamics.SDE):
            raise ValueError("an extended (stochastic) tableau is required exactly when dynamics = sde")
        if self.grid.kind is not self.variant.clock:
            raise ValueError(
                f"grid is in the {self.grid.kind.value} clock but this variant uses {self.variant.clock.value}"
            )
        if self.dynamics is Dynamics.SDE and self.seed is None:
            raise ValueError("sde dynamics need a seed")
        w = np.asarray(weight_from_clock(self.variant.clock, self.parameterization, self.grid.values), dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def build(
        cls,
        model: PredictionModel,
        tableau: ButcherTableau | str,
        n_steps: int,
        dynamics: Dynamics | str = Dynamics.ODE,
        zeta: float = DEFAULT_ZETA,
        tail_fallback: bool = False,
        seed: int | None = None,
        compensated: bool = True,
    ) -> "RexConfig":
        """Config on the grid uniform in physical time from 1 down to ``eps``."""
        dyn = Dynamics(dynamics)
        tab = builtin(tableau) if isinstance(tableau, str) else tableau
        variant = VARIANTS[(dyn, Parameterization(model.parameterization))]
        grid = TimeGrid.uniform(model.schedule, n_steps, variant.clock)
        return cls(model, tab, grid, dyn, zeta, tail_fallback, seed, compensated)

    @property
    def schedule(self) -> NoiseSchedule:
        return self.model.schedule

    @property
    def parameterization(self) -> Parameterization:
        return Parameterization(self.model.parameterization)

    @property
    def variant(self) -> Variant:
        return VARIANTS[(self.dynamics, self.parameterization)]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def tableau_for_step(self, n: int) -> ButcherTableau:
        """Tableau used on step ``n`` (the last two steps may fall back to Euler)."""
        if self.tail_fallback and n >= self.n_steps - 2:
            return builtin("euler_maruyama" if self.dynamics is Dynamics.SDE else "euler")
        return self.tableau

    def with_grid(self, grid: TimeGrid) -> "RexConfig":
        return replace(self, grid=grid)


@dataclass
class RexState:
    """Primary and auxiliary states at grid index ``n``.

    With compensated arithmetic each state is the unevaluated sum of a float64
    part (``x``, ``x_hat``) and a residual (``x_lo``, ``x_hat_lo``) below half
    an ulp of it.  The model only ever sees the float64 parts.
    """

    x: Array
    x_hat: Array
    n: int
    x_lo: Array | None = None
    x_hat_lo: Array | None = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.x_hat = np.asarray(self.x_hat, dtype=np.float64)
        if self.x.shape != self.x_hat.shape:
            raise ValueError("x and x_hat must have the same shape")
        if self.x_lo is None:
            self.x_lo = np.zeros_like(self.x)
        if self.x_hat_lo is None:
            self.x_hat_lo = np.zeros_like(self.x_hat)

    @classmethod
    def initial(cls, x: ArrayLike) -> "RexState":
        xv = np.array(x, dtype=np.float64)
        return cls(xv, xv.copy(), 0)

    def _pair(self) -> tuple[_dd.DD, _dd.DD]:
        return (self.x, self.x_lo), (self.x_hat, self.x_hat_lo)  # type: ignore[return-value]


def make_increments(config: RexConfig, dim: int, tol: float | None = None) -> GridIncrements:
    """Step-keyed Brownian increments for ``config`` (its grid registered in the tree)."""
    if config.seed is None:
        raise ValueError("config has no seed")
    return GridIncrements.for_clock_values(
        config.seed, dim, config.grid.values, config.variant.chi_squared_noise, tol=tol
    )


def _stage_time(schedule: NoiseSchedule, kind: ClockKind, value: float) -> float:
    t = schedule.inverse_clock(kind, value, strict=False)
    if t < schedule.eps:
        if t < schedule.eps * (1.0 - _STAGE_RTOL):
            warnings.warn(
                f"stage time {t!r} below eps={schedule.eps} clamped", StageClampWarning, stacklevel=3
            )
        return schedule.eps
    if t > 1.0:
        if t > 1.0 + _STAGE_RTOL:
            raise StageTimeError(f"stage clock value {value!r} maps to t = {t!r} > 1")
        return 1.0
    return t


def psi_step(
    config: RexConfig,
    s_n: float,
    x: ArrayLike,
    h: float,
    increment: BrownianIncrement | None = None,
    tableau: ButcherTableau | None = None,
    w_n: float | None = None,
    s_end: float | None = None,
) -> Array:
    """Increment ``Psi_h(s_n, x)`` in the weighted coordinates ``x / w``.

    Stage states are kept divided by the weight; the model sees
    ``w(s_n + c_j h) * z_j`` at time ``t(s_n + c_j h)``.  ``w_n`` may be
    passed to reuse the grid weight instead of recomputing it, and ``s_end``
    to pin stages with ``c_j = 1`` to the exact far grid value (the sum
    ``s_n + h`` can round away a tiny clock value entirely).
    """
    tab = config.tableau if tableau is None else tableau
    sde = config.dynamics is Dynamics.SDE
    if sde and increment is None:
        raise ValueError("sde dynamics need a Brownian increment")
    if not sde and increment is not None:
        raise ValueError("ode dynamics take no Brownian increment")
    variant = config.variant
    param = config.parameterization
    schedule = config.schedule
    model = config.model
    s_n = float(s_n)
    h = float(h)
    xv = np.asarray(x, dtype=np.float64)
    if w_n is None:
        w_n = weight_from_clock(variant.clock, param, s_n)
    kh = variant.drift_factor * h
    a = tab.a_float
    c = tab.c_float
    b = tab.b_float
    base = xv / w_n
    if sde:
        aW = tab.aW_float  # type: ignore[attr-defined]
        aH = tab.aH_float  # type: ignore[attr-defined]
    stages: list[Array] = []
    for i in range(tab.stages):
        z = base
        for j in range(i):
            if a[i, j] != 0.0:
                z = z + (kh * a[i, j]) * stages[j]
        if sde:
            if aW[i] != 0.0:
                z = z + aW[i] * increment.W  # type: ignore[union-attr]
            if aH[i] != 0.0:
                z = z + aH[i] * increment.H  # type: ignore[union-attr]
        if c[i] == 0.0:
            s_i = s_n
        elif c[i] == 1.0 and s_end is not None:
            s_i = float(s_end)
        else:
            s_i = s_n + float(c[i]) * h
        w_i = w_n if c[i] == 0.0 else weight_from_clock(variant.clock, param, s_i)
        t_i = _stage_time(schedule, variant.clock, s_i)
        stages.append(np.asarray(model(t_i, w_i * z), dtype=np.float64))
    out = np.zeros_like(base)
    for i in range(tab.stages):
        if b[i] != 0.0:
            out = out + (kh * b[i]) * stages[i]
    if sde:
        if tab.bW != 0:  # type: ignore[attr-defined]
            out = out + float(tab.bW) * increment.W  # type: ignore[attr-defined, union-attr]
        if tab.bH != 0:  # type: ignore[attr-defined]
            out = out + float(tab.bH) * increment.H  # type: ignore[attr-defined, union-attr]
    return out


def _increment(config: RexConfig, increments: GridIncrements | None, n: int) -> BrownianIncrement | None:
    if config.dynamics is Dynamics.ODE:
        return None
    if increments is None:
        raise ValueError("sde dynamics need step-keyed increments (see make_increments)")
    return increments(n)


def _check_finite(step: int, **arrays: Array) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteStateError(step, name)


class _StepData(NamedTuple):
    n: int
    s_n: float
    s_p: float
    w_n: float
    w_p: float
    tableau: ButcherTableau
    inc: BrownianIncrement | None
    inc_rev: BrownianIncrement | None


def _step_data(config: RexConfig, n: int, increments: GridIncrements | None) -> _StepData:
    if not 0 <= n < config.n_steps:
        raise IndexError(f"step {n} outside 0..{config.n_steps - 1}")
    inc = _increment(config, increments, n)
    return _StepData(
        n,
        float(config.grid.values[n]),
        float(config.grid.values[n + 1]),
        float(config.weights[n]),
        float(config.weights[n + 1]),
        config.tableau_for_step(n),
        inc,
        None if inc is None else inc.reversed(),
    )


def _psi_forward(config: RexConfig, d: _StepData, x: Array) -> Array:
    """``Psi_h(s_n, x)``."""
    return psi_step(config, d.s_n, x, d.s_p - d.s_n, d.inc, d.tableau, d.w_n, d.s_p)


def _psi_reverse(config: RexConfig, d: _StepData, x: Array) -> Array:
    """``Psi_{-h}(s_{n+1}, x)`` with the time-reversed increment."""
    return psi_step(config, d.s_p, x, d.s_n - d.s_p, d.inc_rev, d.tableau, d.w_p, d.s_n)


def rex_forward_step(config: RexConfig, state: RexState, increments: GridIncrements | None = None) -> RexState:
    """Advance ``state`` from grid index ``n`` to ``n + 1``."""
    d = _step_data(config, state.n, increments)
    zeta = config.zeta
    ratio = d.w_p / d.w_n
    if not config.compensated:
        x_p = ratio * (zeta * state.x + (1.0 - zeta) * state.x_hat) + d.w_p * _psi_forward(config, d, state.x_hat)
        x_hat_p = ratio * state.x_hat - d.w_p * _psi_reverse(config, d, x_p)
        _check_finite(d.n, x=x_p, x_hat=x_hat_p)
        return RexState(x_p, x_hat_p, d.n + 1)
    # Same update with every affine combination carried in double-double;
    # the backward step divides by exactly the same float coefficients.
    x, x_hat = state._pair()
    mix = _dd.axpy(zeta, x, _dd.scale(1.0 - zeta, x_hat))
    x_p = _dd.axpy(ratio, mix, _dd.scale(d.w_p, _dd.make(_psi_forward(config, d, x_hat[0]))))
    x_hat_p = _dd.axpy(ratio, x_hat, _dd.scale(-d.w_p, _dd.make(_psi_reverse(config, d, x_p[0]))))
    _check_finite(d.n, x=x_p[0], x_hat=x_hat_p[0])
    return RexState(x_p[0], x_hat_p[0], d.n + 1, x_p[1], x_hat_p[1])


def rex_backward_step(config: RexConfig, state: RexState, increments: GridIncrements | None = None) -> RexState:
    """Recover grid index ``n`` from the state at ``n + 1`` in closed form."""
    d = _step_data(config, state.n - 1, increments)
    zeta = config.zeta
    if not config.compensated:
        ratio = d.w_n / d.w_p
        x_hat = ratio * state.x_hat + d.w_n * _psi_reverse(config, d, state.x)
        x = (ratio / zeta) * state.x + (1.0 - 1.0 / zeta) * x_hat - (d.w_n / zeta) * _psi_forward(config, d, x_hat)
        _check_finite(d.n, x=x, x_hat=x_hat)
        return RexState(x, x_hat, d.n)
    ratio = d.w_p / d.w_n
    x_p, x_hat_p = state._pair()
    x_hat = _dd.divide(_dd.axpy(d.w_p, _dd.make(_psi_reverse(config, d, x_p[0])), x_hat_p), ratio)
    mix = _dd.divide(_dd.axpy(-d.w_p, _dd.make(_psi_forward(config, d, x_hat[0])), x_p), ratio)
    x = _dd.divide(_dd.axpy(-(1.0 - zeta), x_hat, mix), zeta)
    _check_finite(d.n, x=x[0], x_hat=x_hat[0])
    return RexState(x[0], x_hat[0], d.n, x[1], x_hat[1])


@dataclass(frozen=True)
class Trajectory:
    """States on every grid point, in grid order (index 0 is ``t = 1``).

    ``x_lo`` and ``x_hat_lo`` hold the compensation residuals (zero without
    compensated arithmetic); :meth:`state` rebuilds the exact solver state.
    """

    t: Array
    clock: Array
    x: Array
    x_hat: Array
    x_lo: Array
    x_hat_lo: Array

    @classmethod
    def from_states(cls, config: RexConfig, states: Sequence[RexState]) -> "Trajectory":
        ordered = sorted(states, key=lambda st: st.n)
        return cls(
            config.grid.t_values.copy(),
            config.grid.values.copy(),
            np.array([st.x for st in ordered]),
            np.array([st.x_hat for st in ordered]),
            np.array([st.x_lo for st in ordered]),
            np.array([st.x_hat_lo for st in ordered]),
        )

    @property
    def x_final(self) -> Array:
        return self.x[-1]

    def state(self, n: int) -> RexState:
        n = range(self.t.size)[n]
        return RexState(self.x[n].copy(), self.x_hat[n].copy(), n, self.x_lo[n].copy(), self.x_hat_lo[n].copy())

    def to_csv(self, out: str | Path | TextIO) -> None:
        """Columns ``step, t, varsigma, x_k..., x_hat_k...`` at 17 significant digits."""
        dim = self.x.shape[1]
        header = ["step", "t", "varsigma"] + [f"x{k}" for k in range(dim)] + [f"x_hat{k}" for k in range(dim)]

        def write(fh: TextIO) -> None:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for n in range(self.t.size):
                writer.writerow(
                    [str(n), format_float(self.t[n]), format_float(self.clock[n])]
                    + [format_float(v) for v in self.x[n]]
                    + [format_float(v) for v in self.x_hat[n]]
                )

        if isinstance(out, (str, Path)):
            with open(out, "w", newline="") as fh:
                write(fh)
        else:
            write(out)


def format_float(v: float) -> str:
    """Shortest-safe text form used by every CSV writer: 17 significant digits."""
    return format(float(v), ".17g")


def _as_state_vector(x: ArrayLike) -> Array:
    xv = np.array(x, dtype=np.float64)
    if xv.ndim != 1:
        raise ValueError("state must be a 1-d vector")
    if not np.all(np.isfinite(xv)):
        raise ValueError("initial state must be finite")
    return xv


def solve(
    config: RexConfig,
    x_T: ArrayLike,
    increments: GridIncrements | None = None,
) -> Trajectory:
    """Sampling pass from ``t = 1`` to ``t = eps`` starting at ``x_hat_0 = x_0 = x_T``."""
    xv = _as_state_vector(x_T)
    if config.dynamics is Dynamics.SDE and increments is None:
        increments = make_increments(config, xv.size)
    states = [RexState.initial(xv)]
    for _ in range(config.n_steps):
        states.append(rex_forward_step(config, states[-1], increments))
    return Trajectory.from_states(config, states)


def invert(
    config: RexConfig,
    x_0: ArrayLike | RexState,
    x_hat_0: ArrayLike | None = None,
    increments: GridIncrements | None = None,
) -> Trajectory:
    """Inversion pass from the data-side pair back to ``t = 1``.

    ``x_0`` is either the data-side primary state (then ``x_hat_0`` is
    required) or a full :class:`RexState` such as ``solve(...).state(-1)``,
    which also carries the compensation residuals.  The returned trajectory
    is in grid order, so ``x[0]`` is the recovered prior-side state.
    """
    if isinstance(x_0, RexState):
        if x_hat_0 is not None:
            raise ValueError("pass either a RexState or the pair (x_0, x_hat_0)")
        start = RexState(x_0.x, x_0.x_hat, config.n_steps, x_0.x_lo, x_0.x_hat_lo)
    else:
        if x_hat_0 is None:
            raise ValueError("x_hat_0 is required when x_0 is an array")
        start = RexState(_as_state_vector(x_0), _as_state_vector(x_hat_0), config.n_steps)
    _check_finite(config.n_steps, x=start.x, x_hat=start.x_hat)
    if config.dynamics is Dynamics.SDE and increments is None:
        increments = make_increments(config, start.x.size)
    states = [start]
    for _ in range(config.n_steps):
        states.append(rex_backward_step(config, states[-1], increments))
    return Trajectory.from_states(config, states)


def psi_solve(
    config: RexConfig,
    x_T: ArrayLike,
    increments: GridIncrements | None = None,
    observer: Callable[[int, Array], None] | None = None,
) -> Array:
    """Non-reversible scheme ``x_{n+1} = (w_{n+1}/w_n) x_n + w_{n+1} Psi_h``; returns the final state.

    ``config.zeta`` and ``config.tail_fallback`` are ignored.
    """
    x = _as_state_vector(x_T)
    if config.dynamics is Dynamics.SDE and increments is None:
        increments = make_increments(config, x.size)
    values = config.grid.values
    weights = config.weights
    for n in range(config.n_steps):
        s_n = float(values[n])
        w_n = float(weights[n])
        w_p = float(weights[n + 1])
        inc = _increment(config, increments, n)
        x = (w_p / w_n) * x + w_p * psi_step(
            config, s_n, x, float(values[n + 1]) - s_n, inc, config.tableau, w_n, float(values[n + 1])
        )
        _check_finite(n, x=x)
        if observer is not None:
            observer(n + 1, x)
    return x


def max_ulp_error(recovered: ArrayLike, original: ArrayLike) -> float:
    """Largest componentwise error in units of the spacing at ``max |original|``."""
    r = np.asarray(recovered, dtype=np.float64)
    o = np.asarray(original, dtype=np.float64)
    scale = float(np.max(np.abs(o))) if o.size else 0.0
    ulp = math.ulp(scale) if scale > 0.0 else math.ulp(1.0)
    return float(np.max(np.abs(r - o))) / ulp if o.size else 0.0

