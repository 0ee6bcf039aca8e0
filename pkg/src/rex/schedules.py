"""Variance-preserving noise schedules and their transformed clocks.

A schedule is described by the log-signal exponent ``a(t) = log(alpha_t)``, a
polynomial in ``t`` for both supported families.  Everything else derives from
it:

* ``alpha_t = exp(a)``
* ``sigma_t = sqrt(1 - alpha_t**2)``, evaluated as ``sqrt(-expm1(2a))``
* ``rho_t = alpha_t**2 / sigma_t**2 = 1 / expm1(-2a)``
* ``gamma_t = sqrt(rho_t)``, ``chi_t = 1 / gamma_t``, ``lambda_t = log(gamma_t)``

The inverse maps solve the polynomial equation ``-2 a(t) = L`` where
``L = log1p(1 / rho)``, using closed forms only (never iteration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "ClockKind",
    "ClockRangeError",
    "ClockSingularityError",
    "NoiseSchedule",
    "Parameterization",
    "ScheduleKind",
    "TimeGrid",
    "DEFAULT_EPS",
    "OVERFLOW_T",
    "weight_from_clock",
]

DEFAULT_EPS = 2e-4
"""Lower end of the solve interval ``[eps, 1]``."""

OVERFLOW_T = 1e-8
"""Below this time the SNR-type clocks report overflow (``inf``)."""

_RANGE_RTOL = 1e-9


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    SCALED_LINEAR = "scaled_linear"


class ClockKind(str, Enum):
    """Transformed time variables.

    ``gamma`` is the signal-to-noise ratio ``alpha/sigma``; ``rho`` its square,
    ``chi`` its reciprocal and ``lambda`` its logarithm.
    """

    GAMMA = "gamma"
    RHO = "rho"
    CHI = "chi"
    LAMBDA = "lambda"


class Parameterization(str, Enum):
    DATA = "data"
    NOISE = "noise"


class ClockSingularityError(ArithmeticError):
    """Raised when a clock is evaluated where ``sigma_t = 0``."""


class ClockRangeError(ValueError):
    """Raised when an inverse clock value is unattainable on ``[eps, 1]``."""


def _as_float_array(x: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(x, dtype=np.float64)


def _maybe_scalar(x: NDArray[np.float64]) -> NDArray[np.float64] | float:
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class NoiseSchedule:
    """A VP schedule on ``t in [0, 1]`` with continuous rates ``beta0 < beta1``.

    Parameters
    ----------
    kind:
        ``linear`` (``beta_t`` affine in ``t``) or ``scaled_linear``
        (``sqrt(beta_t)`` affine in ``t``).
    beta0, beta1:
        Continuous-time rates, i.e. ``N * beta_hat`` for discrete
        hyperparameters ``beta_hat``.
    eps:
        Smallest physical time used by solvers.
    """

    kind: ScheduleKind
    beta0: float
    beta1: float
    eps: float = DEFAULT_EPS
    _delta: float = field(init=False, repr=False, compare=False)
    _cross: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not (self.beta1 > self.beta0 > 0.0):
            raise ValueError(f"need beta1 > beta0 > 0, got beta0={self.beta0}, beta1={self.beta1}")
        if not (0.0 < self.eps < 1.0):
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.kind is ScheduleKind.LINEAR:
            delta = self.beta1 - self.beta0
            cross = 0.0
        else:
            root = math.sqrt(self.beta1 * self.beta0)
            delta = self.beta1 - 2.0 * root + self.beta0
            cross = root - self.beta0
        object.__setattr__(self, "_delta", delta)
        object.__setattr__(self, "_cross", cross)

    # ------------------------------------------------------------------ factories
    @classmethod
    def linear(
        cls,
        beta_hat0: float = 1e-4,
        beta_hat1: float = 0.2,
        n_train: int = 1000,
        eps: float = DEFAULT_EPS,
    ) -> "NoiseSchedule":
        """Linear schedule from discrete hyperparameters (``beta = n_train * beta_hat``)."""
        return cls(ScheduleKind.LINEAR, n_train * beta_hat0, n_train * beta_hat1, eps)

    @classmethod
    def scaled_linear(
        cls,
        beta_hat0: float = 0.00085,
        beta_hat1: float = 0.012,
        n_train: int = 1000,
        eps: float = DEFAULT_EPS,
    ) -> "NoiseSchedule":
        """Scaled-linear schedule from discrete hyperparameters."""
        return cls(ScheduleKind.SCALED_LINEAR, n_train * beta_hat0, n_train * beta_hat1, eps)

    @classmethod
    def from_name(
        cls,
        name: str,
        beta_hat0: float | None = None,
        beta_hat1: float | None = None,
        n_train: int = 1000,
        eps: float = DEFAULT_EPS,
    ) -> "NoiseSchedule":
        kind = ScheduleKind(name)
        factory = cls.linear if kind is ScheduleKind.LINEAR else cls.scaled_linear
        kwargs: dict[str, float] = {}
        if beta_hat0 is not None:
            kwargs["beta_hat0"] = beta_hat0
        if beta_hat1 is not None:
            kwargs["beta_hat1"] = beta_hat1
        return factory(n_train=n_train, eps=eps, **kwargs)

    # ------------------------------------------------------------------ primitives
    def _check_t(self, t: NDArray[np.float64]) -> None:
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("time must lie in [0, 1]")

    def _neg_two_log_alpha(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        """``-2 log(alpha_t)``, i.e. the integrated rate ``int_0^t beta``."""
        if self.kind is ScheduleKind.LINEAR:
            return t * (self.beta0 + 0.5 * self._delta * t)
        return t * (self.beta0 + t * (self._cross + t * self._delta / 3.0))

    def _scalar_rate(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError("time must lie in [0, 1]")
        if self.kind is ScheduleKind.LINEAR:
            return t * (self.beta0 + 0.5 * self._delta * t)
        return t * (self.beta0 + t * (self._cross + t * self._delta / 3.0))

    def log_alpha(self, t: ArrayLike) -> NDArray[np.float64] | float:
        tt = _as_float_array(t)
        self._check_t(tt)
        return _maybe_scalar(-0.5 * self._neg_two_log_alpha(tt))

    def alpha(self, t: ArrayLike) -> NDArray[np.float64] | float:
        if type(t) is float:
            return math.exp(-0.5 * self._scalar_rate(t))
        tt = _as_float_array(t)
        self._check_t(tt)
        return _maybe_scalar(np.exp(-0.5 * self._neg_two_log_alpha(tt)))

    def sigma(self, t: ArrayLike) -> NDArray[np.float64] | float:
        if type(t) is float:
            return math.sqrt(-math.expm1(-self._scalar_rate(t)))
        tt = _as_float_array(t)
        self._check_t(tt)
        return _maybe_scalar(np.sqrt(-np.expm1(-self._neg_two_log_alpha(tt))))

    def beta(self, t: ArrayLike) -> NDArray[np.float64] | float:
        """Instantaneous rate ``beta_t = -2 d log(alpha_t) / dt``."""
        tt = _as_float_array(t)
        self._check_t(tt)
        if self.kind is ScheduleKind.LINEAR:
            return _maybe_scalar(self.beta0 + self._delta * tt)
        root0 = math.sqrt(self.beta0)
        return _maybe_scalar((root0 + tt * (math.sqrt(self.beta1) - root0)) ** 2)

    # ------------------------------------------------------------------ clocks
    def clock(self, kind: ClockKind | str, t: ArrayLike) -> NDArray[np.float64] | float:
        """Evaluate a transformed clock at physical time ``t``.

        ``gamma``, ``rho`` and ``lambda`` are singular at ``t = 0``, which raises
        :class:`ClockSingularityError`; for ``0 < t < OVERFLOW_T`` they return
        ``inf`` as an overflow signal.
        """
        kind = ClockKind(kind)
        if type(t) is float and t >= OVERFLOW_T:
            chi_sq_s = math.expm1(self._scalar_rate(t))
            if kind is ClockKind.CHI:
                return math.sqrt(chi_sq_s)
            if kind is ClockKind.RHO:
                return 1.0 / chi_sq_s
            if kind is ClockKind.GAMMA:
                return 1.0 / math.sqrt(chi_sq_s)
            return -0.5 * math.log(chi_sq_s)
        tt = _as_float_array(t)
        self._check_t(tt)
        if kind is not ClockKind.CHI and np.any(tt == 0.0):
            raise ClockSingularityError(f"{kind.value} clock is singular at t = 0")
        # chi^2 = sigma^2 / alpha^2 = expm1(-2 log alpha)
        chi_sq = np.expm1(self._neg_two_log_alpha(tt))
        with np.errstate(divide="ignore"):
            if kind is ClockKind.CHI:
                out = np.sqrt(chi_sq)
            elif kind is ClockKind.RHO:
                out = 1.0 / chi_sq
            elif kind is ClockKind.GAMMA:
                out = 1.0 / np.sqrt(chi_sq)
            else:
                out = -0.5 * np.log(chi_sq)
        if kind is not ClockKind.CHI:
            out = np.where(tt < OVERFLOW_T, np.inf, out)
        return _maybe_scalar(np.asarray(out, dtype=np.float64))

    def _solve_integrated_rate(self, big_l: NDArray[np.float64]) -> NDArray[np.float64]:
        """Solve ``int_0^t beta = L`` for ``t`` in closed form.

        The linear case is the positive root of a quadratic, written in the
        rationalized form ``2L / (beta0 + sqrt(beta0^2 + 2 (beta1 - beta0) L))``.
        The scaled-linear case is the real Cardano root of
        ``(D/3) t^3 + c t^2 + beta0 t - L = 0``, which collapses to
        ``(cbrt(beta0^1.5 + 3 d L) - sqrt(beta0)) / d`` with
        ``d = sqrt(beta1) - sqrt(beta0)``; the difference of cube root and
        ``sqrt(beta0)`` is rationalized so small ``L`` loses no digits.
        """
        if self.kind is ScheduleKind.LINEAR:
            disc = np.sqrt(self.beta0 * self.beta0 + 2.0 * self._delta * big_l)
            return 2.0 * big_l / (self.beta0 + disc)
        root0 = math.sqrt(self.beta0)
        d = math.sqrt(self.beta1) - root0
        cube = np.cbrt(self.beta0 * root0 + 3.0 * d * big_l)
        return 3.0 * big_l / (cube * cube + root0 * cube + self.beta0)

    def inverse_clock(
        self, kind: ClockKind | str, value: ArrayLike, *, strict: bool = True
    ) -> NDArray[np.float64] | float:
        """Physical time at which ``clock(kind, t) == value``.

        With ``strict`` (the default) values whose preimage falls outside
        ``[eps, 1]`` by more than a relative ``1e-9`` raise
        :class:`ClockRangeError`; preimages within that rounding band are
        clipped onto the interval.  With ``strict=False`` the raw closed-form
        root is returned for any positive clock value.
        """
        kind = ClockKind(kind)
        if type(value) is float and value > 0.0 and kind is not ClockKind.LAMBDA:
            return self._scalar_inverse(kind, value, strict)
        v = _as_float_array(value)
        if kind is ClockKind.LAMBDA:
            big_l = np.log1p(np.exp(-2.0 * v))
        else:
            if np.any(~(v > 0.0)):
                raise ClockRangeError(f"{kind.value} clock values must be positive")
            with np.errstate(over="ignore"):
                if kind is ClockKind.GAMMA:
                    big_l = np.log1p(1.0 / (v * v))
                elif kind is ClockKind.RHO:
                    big_l = np.log1p(1.0 / v)
                else:
                    big_l = np.log1p(v * v)
        t = self._solve_integrated_rate(big_l)
        if strict:
            lo = self.eps * (1.0 - _RANGE_RTOL)
            hi = 1.0 + _RANGE_RTOL
            if np.any(~np.isfinite(t)) or np.any(t < lo) or np.any(t > hi):
                raise ClockRangeError(
                    f"{kind.value} clock value outside the range attained on [{self.eps}, 1]"
                )
            t = np.clip(t, self.eps, 1.0)
        return _maybe_scalar(np.asarray(t, dtype=np.float64))

    def _scalar_inverse(self, kind: ClockKind, value: float, strict: bool) -> float:
        """Scalar twin of :meth:`inverse_clock` for positive SNR-type values."""
        if kind is ClockKind.GAMMA:
            big_l = math.log1p(1.0 / (value * value)) if value < 1e150 else 1.0 / (value * value)
        elif kind is ClockKind.RHO:
            big_l = math.log1p(1.0 / value)
        else:
            big_l = math.log1p(value * value) if value < 1e150 else math.inf
        if self.kind is ScheduleKind.LINEAR:
            disc = math.sqrt(self.beta0 * self.beta0 + 2.0 * self._delta * big_l)
            t = 2.0 * big_l / (self.beta0 + disc)
        else:
            root0 = math.sqrt(self.beta0)
            d = math.sqrt(self.beta1) - root0
            cube = np.cbrt(self.beta0 * root0 + 3.0 * d * big_l)
            t = float(3.0 * big_l / (cube * cube + root0 * cube + self.beta0))
        if strict:
            if not (self.eps * (1.0 - _RANGE_RTOL) <= t <= 1.0 + _RANGE_RTOL):
                raise ClockRangeError(
                    f"{kind.value} clock value outside the range attained on [{self.eps}, 1]"
                )
            t = min(max(t, self.eps), 1.0)
        return t

    def clock_range(self, kind: ClockKind | str) -> tuple[float, float]:
        """``(min, max)`` of a clock over ``[eps, 1]``."""
        ends = np.asarray(self.clock(kind, np.array([self.eps, 1.0])))
        return float(ends.min()), float(ends.max())


def weight_from_clock(
    kind: ClockKind | str, parameterization: Parameterization | str, value: ArrayLike
) -> NDArray[np.float64] | float:
    """Exponential weight ``w`` expressed directly in the clock value.

    =========  ================  =====================================
    clock      parameterization  weight
    =========  ================  =====================================
    gamma      data              ``sigma = 1 / sqrt(gamma^2 + 1)``
    rho        data              ``sigma / gamma = 1 / sqrt(rho (1 + rho))``
    chi        noise             ``alpha = 1 / sqrt(chi^2 + 1)``
    =========  ================  =====================================

    The ``rho`` form equals ``1 / (rho sqrt(1/rho + 1))`` but avoids forming
    ``1 / rho`` for tiny ``rho``.
    """
    kind = ClockKind(kind)
    param = Parameterization(parameterization)
    if type(value) is float:
        if kind is ClockKind.RHO and param is Parameterization.DATA:
            return 1.0 / math.sqrt(value * (1.0 + value))
        if (kind, param) in ((ClockKind.GAMMA, Parameterization.DATA), (ClockKind.CHI, Parameterization.NOISE)):
            return float(1.0 / np.hypot(value, 1.0))
    v = _as_float_array(value)
    if kind is ClockKind.GAMMA and param is Parameterization.DATA:
        out = 1.0 / np.hypot(v, 1.0)
    elif kind is ClockKind.RHO and param is Parameterization.DATA:
        out = 1.0 / np.sqrt(v * (1.0 + v))
    elif kind is ClockKind.CHI and param is Parameterization.NOISE:
        out = 1.0 / np.hypot(v, 1.0)
    else:
        raise ValueError(f"no weight map for clock {kind.value!r} with {param.value} prediction")
    return _maybe_scalar(np.asarray(out, dtype=np.float64))


@dataclass(frozen=True)
class TimeGrid:
    """Sampling grid: ``N + 1`` physical times from 1 down to ``eps``.

    ``values`` holds the same grid mapped through ``kind``.
    """

    kind: ClockKind
    t_values: NDArray[np.float64]
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.asarray(self.t_values, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("grid needs matching 1-d arrays with at least two points")
        if not np.all(np.diff(t) < 0.0):
            raise ValueError("t_values must be strictly decreasing")
        dv = np.diff(v)
        if not (np.all(dv > 0.0) or np.all(dv < 0.0)):
            raise ValueError("transformed values must be strictly monotone")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "kind", ClockKind(self.kind))
        object.__setattr__(self, "t_values", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, schedule: NoiseSchedule, n_steps: int, kind: ClockKind | str) -> "TimeGrid":
        """Grid uniform in physical time on ``[eps, 1]``."""
        if n_steps < 1:
            raise ValueError("n_steps must be positive")
        t = np.linspace(1.0, schedule.eps, n_steps + 1)
        return cls(ClockKind(kind), t, np.asarray(schedule.clock(kind, t), dtype=np.float64))

    @property
    def n_steps(self) -> int:
        return self.t_values.size - 1

    def subsample(self, stride: int) -> "TimeGrid":
        """Every ``stride``-th point; used to nest a coarse grid in a fine one."""
        if stride < 1 or self.n_steps % stride:
            raise ValueError("stride must divide the number of steps")
        return TimeGrid(self.kind, self.t_values[::stride].copy(), self.values[::stride].copy())
