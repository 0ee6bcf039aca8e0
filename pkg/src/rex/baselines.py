"""Closed-form sampler steps and earlier reversible solvers.

Single-step samplers (DDIM, DPM-Solver-1, DPM-Solver++1, their SDE forms and
DPM-Solver++(2S)) are written in the log-SNR ``lambda`` domain with
``h = lambda_{n+1} - lambda_n``, taken from the schedule's ``lambda`` clock.

Reversible baselines come with an explicit ``backward`` that inverts
``forward`` algebraically:

* EDICT couples two sequences ``(x, y)`` with mixing weight ``xi``.
* BDIA is a two-step scheme built from a one-step increment ``Phi``; with an
  Euler increment and ``gamma = 1`` it is the leapfrog method.
* O-BELM is the optimal two-step BELM scheme on ``x / alpha`` against the
  clock ``sigma / alpha``.
* Reversible Heun (ODE and additive-noise SDE) and the asynchronous leapfrog
  method act on a general vector field ``f(t, x)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .models import PredictionModel, convert
from .schedules import NoiseSchedule, Parameterization

__all__ = [
    "BaselineKind",
    "BaselineTag",
    "Increment",
    "async_leapfrog_backward",
    "async_leapfrog_forward",
    "baseline_step",
    "bdia_backward",
    "bdia_forward",
    "ddim_increment",
    "ddim_sde_eta",
    "ddim_step",
    "dpm1_step",
    "dpmpp1_step",
    "dpmpp_2s_step",
    "edict_backward",
    "edict_forward",
    "euler_increment",
    "obelm_backward",
    "obelm_diffusion_velocity",
    "obelm_forward",
    "reversible_heun_backward",
    "reversible_heun_forward",
    "sde_dpm1_step",
    "sde_dpmpp1_step",
]

Array = NDArray[np.float64]
VectorField = Callable[[float, Array], Array]
Increment = Callable[[float, float, Array], Array]
"""``Phi(t_from, t_to, x)``: a one-step increment, i.e. the step result minus ``x``."""


# --------------------------------------------------------------------- helpers
def _coeffs(schedule: NoiseSchedule, t: float) -> tuple[float, float, float]:
    return float(schedule.alpha(t)), float(schedule.sigma(t)), float(schedule.clock("lambda", t))


def _vec(x: ArrayLike) -> Array:
    # Complex input is kept complex so the linear test equation can be iterated.
    arr = np.asarray(x)
    return arr.astype(np.result_type(arr.dtype, np.float64), copy=False)


def _data(model: PredictionModel, t: float, x: Array) -> Array:
    return convert(model, Parameterization.DATA, t, x)


def _noise(model: PredictionModel, t: float, x: Array) -> Array:
    return convert(model, Parameterization.NOISE, t, x)


# ------------------------------------------------------------- single step
def dpmpp1_step(schedule: NoiseSchedule, model: PredictionModel, t_n: float, t_p: float, x: ArrayLike) -> Array:
    """DPM-Solver++1: ``(sigma+/sigma) x - alpha+ (e^{-h} - 1) x0``."""
    xv = _vec(x)
    _, s_n, l_n = _coeffs(schedule, t_n)
    a_p, s_p, l_p = _coeffs(schedule, t_p)
    h = l_p - l_n
    return (s_p / s_n) * xv - a_p * math.expm1(-h) * _data(model, t_n, xv)


def dpm1_step(schedule: NoiseSchedule, model: PredictionModel, t_n: float, t_p: float, x: ArrayLike) -> Array:
    """DPM-Solver-1: ``(alpha+/alpha) x - sigma+ (e^{h} - 1) xT``."""
    xv = _vec(x)
    a_n, _, l_n = _coeffs(schedule, t_n)
    a_p, s_p, l_p = _coeffs(schedule, t_p)
    h = l_p - l_n
    return (a_p / a_n) * xv - s_p * math.expm1(h) * _noise(model, t_n, xv)


def sde_dpmpp1_step(
    schedule: NoiseSchedule, model: PredictionModel, t_n: float, t_p: float, x: ArrayLike, noise: ArrayLike
) -> Array:
    """SDE-DPM-Solver++1 with standard normal ``noise``."""
    xv = _vec(x)
    _, s_n, l_n = _coeffs(schedule, t_n)
    a_p, s_p, l_p = _coeffs(schedule, t_p)
    h = l_p - l_n
    keep = -math.expm1(-2.0 * h)
    return (s_p / s_n) * math.exp(-h) * xv + a_p * keep * _data(model, t_n, xv) + s_p * math.sqrt(keep) * _vec(noise)


def sde_dpm1_step(
    schedule: NoiseSchedule, model: PredictionModel, t_n: float, t_p: float, x: ArrayLike, noise: ArrayLike
) -> Array:
    """SDE-DPM-Solver-1 with standard normal ``noise``."""
    xv = _vec(x)
    a_n, _, l_n = _coeffs(schedule, t_n)
    a_p, s_p, l_p = _coeffs(schedule, t_p)
    h = l_p - l_n
    return (
        (a_p / a_n) * xv
        - 2.0 * s_p * math.expm1(h) * _noise(model, t_n, xv)
        + s_p * math.sqrt(math.expm1(2.0 * h)) * _vec(noise)
    )


def dpmpp_2s_step(
    schedule: NoiseSchedule,
    model: PredictionModel,
    t_n: float,
    t_p: float,
    x: ArrayLike,
    r: float = 0.5,
    mid_offset: float | None = None,
) -> Array:
    """DPM-Solver++(2S) with intermediate point at ``lambda_n + r h``.

    ``r`` sets both the intermediate point and the ``1/(2r)`` combination
    weight.  ``mid_offset`` overrides only the location: the intermediate
    point becomes ``lambda_n + mid_offset``.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"r must lie in (0, 1], got {r}")
    xv = _vec(x)
    _, s_n, l_n = _coeffs(schedule, t_n)
    a_p, s_p, l_p = _coeffs(schedule, t_p)
    h = l_p - l_n
    offset = r * h if mid_offset is None else float(mid_offset)
    t_mid = float(schedule.inverse_clock("lambda", l_n + offset, strict=False))
    a_m, s_m, _ = _coeffs(schedule, t_mid)
    d0 = _data(model, t_n, xv)
    u = (s_m / s_n) * xv - a_m * math.expm1(-offset) * d0
    d = (1.0 - 1.0 / (2.0 * r)) * d0 + (1.0 / (2.0 * r)) * _data(model, t_mid, u)
    return (s_p / s_n) * xv - a_p * math.expm1(-h) * d


def ddim_step(
    schedule: NoiseSchedule,
    model: PredictionModel,
    t_n: float,
    t_p: float,
    x: ArrayLike,
    eta: float = 0.0,
    noise: ArrayLike | None = None,
) -> Array:
    """DDIM: ``alpha+ x0 + sqrt(sigma+^2 - eta^2) eps_hat + eta * noise``.

    ``eta = 0`` is the deterministic sampler; ``eta`` is an absolute noise
    scale and must not exceed ``sigma+``.
    """
    xv = _vec(x)
    a_n, s_n, _ = _coeffs(schedule, t_n)
    a_p, s_p, _ = _coeffs(schedule, t_p)
    if not 0.0 <= eta <= s_p:
        raise ValueError(f"eta must lie in [0, sigma_next={s_p}], got {eta}")
    x0 = _data(model, t_n, xv)
    eps_hat = (xv - a_n * x0) / s_n
    out = a_p * x0 + math.sqrt(s_p * s_p - eta * eta) * eps_hat
    if eta > 0.0:
        if noise is None:
            raise ValueError("stochastic DDIM needs a noise sample")
        out = out + eta * _vec(noise)
    return out


def ddim_sde_eta(schedule: NoiseSchedule, t_n: float, t_p: float) -> float:
    """Noise scale ``sigma+ sqrt(1 - e^{-2h})`` that makes DDIM an SDE step."""
    _, _, l_n = _coeffs(schedule, t_n)
    _, s_p, l_p = _coeffs(schedule, t_p)
    return s_p * math.sqrt(-math.expm1(-2.0 * (l_p - l_n)))


# ------------------------------------------------------------- increments
def ddim_increment(schedule: NoiseSchedule, model: PredictionModel) -> Increment:
    """Deterministic DDIM step as an increment between arbitrary times."""

    def phi(t_from: float, t_to: float, x: Array) -> Array:
        return ddim_step(schedule, model, t_from, t_to, x) - x

    return phi


def euler_increment(f: VectorField) -> Increment:
    """Explicit Euler increment ``(t_to - t_from) f(t_from, x)``."""

    def phi(t_from: float, t_to: float, x: Array) -> Array:
        return (t_to - t_from) * _vec(f(t_from, x))

    return phi


# ------------------------------------------------------------------ EDICT
def _edict_ab(schedule: NoiseSchedule, t_n: float, t_p: float) -> tuple[float, float]:
    a_n, s_n, _ = _coeffs(schedule, t_n)
    a_p, s_p, _ = _coeffs(schedule, t_p)
    a = a_p / a_n
    return a, s_p - a * s_n


def _check_xi(xi: float) -> None:
    if not 0.0 < xi < 1.0:
        raise ValueError(f"xi must lie in (0, 1), got {xi}")


def edict_forward(
    schedule: NoiseSchedule, model: PredictionModel, t_n: float, t_p: float, x: ArrayLike, y: ArrayLike, xi: float = 0.93
) -> tuple[Array, Array]:
    """One EDICT step on the coupled pair ``(x, y)``."""
    _check_xi(xi)
    xv, yv = _vec(x), _vec(y)
    a, b = _edict_ab(schedule, t_n, t_p)
    x_inter = a * xv + b * _noise(model, t_n, yv)
    y_inter = a * yv + b * _noise(model, t_n, x_inter)
    x_p = xi * x_inter + (1.0 - xi) * y_inter
    y_p = xi * y_inter + (1.0 - xi) * x_p
    return x_p, y_p


def edict_backward(
    schedule: NoiseSchedule, model: PredictionModel, t_n: float, t_p: float, x_p: ArrayLike, y_p: ArrayLike, xi: float = 0.93
) -> tuple[Array, Array]:
    """Exact inverse of :func:`edict_forward`."""
    _check_xi(xi)
    xv, yv = _vec(x_p), _vec(y_p)
    a, b = _edict_ab(schedule, t_n, t_p)
    y_inter = (yv - (1.0 - xi) * xv) / xi
    x_inter = (xv - (1.0 - xi) * y_inter) / xi
    y = (y_inter - b * _noise(model, t_n, x_inter)) / a
    x = (x_inter - b * _noise(model, t_n, y)) / a
    return x, y


# ------------------------------------------------------------------- BDIA
def _check_gamma(gamma: float, invertible: bool) -> None:
    lo_ok = gamma > 0.0 if invertible else gamma >= 0.0
    if not (lo_ok and gamma <= 1.0):
        bound = "(0, 1]" if invertible else "[0, 1]"
        raise ValueError(f"gamma must lie in {bound}, got {gamma}")


def bdia_forward(
    phi: Increment,
    t_prev: float,
    t_n: float,
    t_p: float,
    x_prev: ArrayLike,
    x_n: ArrayLike,
    gamma: float = 1.0,
) -> Array:
    """``x+ = gamma x- + (1 - gamma) x - gamma Phi(t_n -> t_prev)(x) + Phi(t_n -> t+)(x)``."""
    _check_gamma(gamma, invertible=False)
    xp, xn = _vec(x_prev), _vec(x_n)
    return gamma * xp + (1.0 - gamma) * xn - gamma * phi(t_n, t_prev, xn) + phi(t_n, t_p, xn)


def bdia_backward(
    phi: Increment,
    t_prev: float,
    t_n: float,
    t_p: float,
    x_n: ArrayLike,
    x_next: ArrayLike,
    gamma: float = 1.0,
) -> Array:
    """Recover ``x-`` from ``(x, x+)``; needs ``gamma > 0``."""
    _check_gamma(gamma, invertible=True)
    xn, xq = _vec(x_n), _vec(x_next)
    return (xq - (1.0 - gamma) * xn + gamma * phi(t_n, t_prev, xn) - phi(t_n, t_p, xn)) / gamma


# ------------------------------------------------------------------ O-BELM
def _obelm_coeffs(h_prev: float, h_n: float) -> tuple[float, float, float]:
    if h_prev == 0.0 or h_n == 0.0:
        raise ValueError("O-BELM needs nonzero steps")
    q = h_n * h_n / (h_prev * h_prev)
    return q, 1.0 - q, h_n * (h_n + h_prev) / h_prev


def obelm_forward(
    velocity: Callable[[float, Array], Array],
    s_prev: float,
    s_n: float,
    s_p: float,
    xbar_prev: ArrayLike,
    xbar_n: ArrayLike,
) -> Array:
    """Two-step O-BELM on ``d xbar = v(s, xbar) ds``.

    For diffusion models ``xbar = x / alpha``, ``s = sigma / alpha`` and
    ``v`` is the noise prediction at ``alpha * xbar`` (see
    :func:`obelm_diffusion_velocity`).  With equal steps this is leapfrog:
    ``xbar+ = xbar- + 2 h v(s_n, xbar_n)``.
    """
    c_prev, c_n, c_v = _obelm_coeffs(s_n - s_prev, s_p - s_n)
    xn = _vec(xbar_n)
    return c_prev * _vec(xbar_prev) + c_n * xn + c_v * _vec(velocity(s_n, xn))


def obelm_backward(
    velocity: Callable[[float, Array], Array],
    s_prev: float,
    s_n: float,
    s_p: float,
    xbar_n: ArrayLike,
    xbar_next: ArrayLike,
) -> Array:
    """Exact inverse of :func:`obelm_forward` for the oldest state."""
    c_prev, c_n, c_v = _obelm_coeffs(s_n - s_prev, s_p - s_n)
    xn = _vec(xbar_n)
    return (_vec(xbar_next) - c_n * xn - c_v * _vec(velocity(s_n, xn))) / c_prev


def obelm_diffusion_velocity(schedule: NoiseSchedule, model: PredictionModel) -> Callable[[float, Array], Array]:
    """Velocity in ``(sigma/alpha, x/alpha)`` coordinates: the noise prediction."""

    def v(s: float, xbar: Array) -> Array:
        t = float(schedule.inverse_clock("chi", s, strict=False))
        return _noise(model, t, float(schedule.alpha(t)) * xbar)

    return v


# --------------------------------------------------------- reversible Heun
def reversible_heun_forward(
    f: VectorField,
    t_n: float,
    t_p: float,
    x: ArrayLike,
    x_hat: ArrayLike,
    g: VectorField | None = None,
    dW: ArrayLike | None = None,
) -> tuple[Array, Array]:
    """Reversible Heun step for ``dx = f dt + g dW`` (``g = None`` for ODEs).

    ``g(t, x)`` returns the diffusion acting elementwise on ``dW``.
    """
    xv, xh = _vec(x), _vec(x_hat)
    h = t_p - t_n
    f_n = _vec(f(t_n, xh))
    xh_p = 2.0 * xv - xh + f_n * h
    if g is not None:
        w = _vec(dW)
        g_n = _vec(g(t_n, xh))
        xh_p = xh_p + g_n * w
    f_p = _vec(f(t_p, xh_p))
    x_p = xv + 0.5 * (f_p + f_n) * h
    if g is not None:
        x_p = x_p + 0.5 * (_vec(g(t_p, xh_p)) + g_n) * w
    return x_p, xh_p


def reversible_heun_backward(
    f: VectorField,
    t_n: float,
    t_p: float,
    x_p: ArrayLike,
    x_hat_p: ArrayLike,
    g: VectorField | None = None,
    dW: ArrayLike | None = None,
) -> tuple[Array, Array]:
    """Exact inverse of :func:`reversible_heun_forward`."""
    xv, xh_p = _vec(x_p), _vec(x_hat_p)
    h = t_p - t_n
    f_p = _vec(f(t_p, xh_p))
    xh = 2.0 * xv - xh_p - f_p * h
    if g is not None:
        w = _vec(dW)
        g_p = _vec(g(t_p, xh_p))
        xh = xh - g_p * w
    f_n = _vec(f(t_n, xh))
    x = xv - 0.5 * (f_p + f_n) * h
    if g is not None:
        x = x - 0.5 * (g_p + _vec(g(t_n, xh))) * w
    return x, xh


# ------------------------------------------------------ asynchronous leapfrog
def async_leapfrog_forward(f: VectorField, t_n: float, t_p: float, x: ArrayLike, v: ArrayLike) -> tuple[Array, Array]:
    """Asynchronous leapfrog step on ``(x, v)`` with ``v`` tracking ``f``."""
    xv, vv = _vec(x), _vec(v)
    h = t_p - t_n
    x_half = xv + 0.5 * vv * h
    v_half = _vec(f(t_n + 0.5 * h, x_half))
    return xv + v_half * h, 2.0 * v_half - vv


def async_leapfrog_backward(
    f: VectorField, t_n: float, t_p: float, x_p: ArrayLike, v_p: ArrayLike
) -> tuple[Array, Array]:
    """Exact inverse of :func:`async_leapfrog_forward`."""
    xv, vv = _vec(x_p), _vec(v_p)
    h = t_p - t_n
    x_half = xv - 0.5 * vv * h
    v_half = _vec(f(t_n + 0.5 * h, x_half))
    return xv - v_half * h, 2.0 * v_half - vv


# ------------------------------------------------------------------ kinds
class BaselineTag(str, Enum):
    DDIM_DET = "ddim_det"
    DDIM_STOCH = "ddim_stoch"
    DPM1 = "dpm1"
    DPMPP1 = "dpmpp1"
    SDE_DPM1 = "sde_dpm1"
    SDE_DPMPP1 = "sde_dpmpp1"
    DPMPP_2S = "dpmpp_2s"
    EDICT = "edict"
    BDIA = "bdia"
    OBELM = "obelm"
    REVERSIBLE_HEUN_ODE = "reversible_heun_ode"
    REVERSIBLE_HEUN_SDE = "reversible_heun_sde"
    ASYNC_LEAPFROG = "async_leapfrog"


_PARAM_RANGES: dict[BaselineTag, tuple[float, float, bool, bool, float | None]] = {
    # tag: (lo, hi, lo_inclusive, hi_inclusive, default)
    BaselineTag.DDIM_STOCH: (0.0, math.inf, True, False, None),
    BaselineTag.DPMPP_2S: (0.0, 1.0, False, True, 0.5),
    BaselineTag.EDICT: (0.0, 1.0, False, False, 0.93),
    BaselineTag.BDIA: (0.0, 1.0, True, True, 1.0),
}

_KIND_RE = re.compile(r"^(?P<tag>[a-z_0-9]+?)(?:\((?P<arg>[^)]*)\))?$")


@dataclass(frozen=True)
class BaselineKind:
    """A baseline name with its optional scalar parameter.

    ``ddim_stoch(eta)`` carries an absolute noise scale (``None`` selects the
    SDE-matching value), ``dpmpp_2s(r)``, ``edict(xi)`` and ``bdia(gamma)``
    their mixing or midpoint parameter.
    """

    tag: BaselineTag
    param: float | None = None

    def __post_init__(self) -> None:
        tag = BaselineTag(self.tag)
        object.__setattr__(self, "tag", tag)
        spec = _PARAM_RANGES.get(tag)
        if spec is None:
            if self.param is not None:
                raise ValueError(f"{tag.value} takes no parameter")
            return
        lo, hi, lo_inc, hi_inc, default = spec
        p = default if self.param is None else float(self.param)
        object.__setattr__(self, "param", p)
        if p is None:
            return
        ok_lo = p >= lo if lo_inc else p > lo
        ok_hi = p <= hi if hi_inc else p < hi
        if not (ok_lo and ok_hi):
            raise ValueError(f"parameter {p} outside the allowed range for {tag.value}")

    @classmethod
    def parse(cls, text: str) -> "BaselineKind":
        m = _KIND_RE.match(text.strip())
        if m is None:
            raise ValueError(f"cannot parse baseline {text!r}")
        arg = m.group("arg")
        if arg is None or arg.strip() == "":
            return cls(BaselineTag(m.group("tag")))
        return cls(BaselineTag(m.group("tag")), float(Fraction(arg.strip())))

    @property
    def name(self) -> str:
        return self.tag.value if self.param is None else f"{self.tag.value}({self.param!r})"

    @property
    def reversible(self) -> bool:
        return self.tag in {
            BaselineTag.EDICT,
            BaselineTag.BDIA,
            BaselineTag.OBELM,
            BaselineTag.REVERSIBLE_HEUN_ODE,
            BaselineTag.REVERSIBLE_HEUN_SDE,
            BaselineTag.ASYNC_LEAPFROG,
        }

    @property
    def stochastic(self) -> bool:
        return self.tag in {
            BaselineTag.DDIM_STOCH,
            BaselineTag.SDE_DPM1,
            BaselineTag.SDE_DPMPP1,
            BaselineTag.REVERSIBLE_HEUN_SDE,
        }


def baseline_step(
    kind: BaselineKind | str,
    schedule: NoiseSchedule,
    model: PredictionModel,
    t_n: float,
    t_p: float,
    x: ArrayLike,
    noise: ArrayLike | None = None,
) -> Array:
    """Dispatch a single-step (non-reversible) sampler by kind."""
    k = BaselineKind.parse(kind) if isinstance(kind, str) else kind
    tag = k.tag
    if tag is BaselineTag.DPMPP1:
        return dpmpp1_step(schedule, model, t_n, t_p, x)
    if tag is BaselineTag.DPM1:
        return dpm1_step(schedule, model, t_n, t_p, x)
    if tag is BaselineTag.DDIM_DET:
        return ddim_step(schedule, model, t_n, t_p, x)
    if tag is BaselineTag.DPMPP_2S:
        return dpmpp_2s_step(schedule, model, t_n, t_p, x, float(k.param))  # type: ignore[arg-type]
    if noise is None:
        raise ValueError(f"{tag.value} needs a noise sample")
    if tag is BaselineTag.SDE_DPMPP1:
        return sde_dpmpp1_step(schedule, model, t_n, t_p, x, noise)
    if tag is BaselineTag.SDE_DPM1:
        return sde_dpm1_step(schedule, model, t_n, t_p, x, noise)
    if tag is BaselineTag.DDIM_STOCH:
        eta = ddim_sde_eta(schedule, t_n, t_p) if k.param is None else float(k.param)
        return ddim_step(schedule, model, t_n, t_p, x, eta, noise)
    raise ValueError(f"{tag.value} is a multi-state reversible solver; call its forward/backward functions")
