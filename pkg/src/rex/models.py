"""Prediction models with analytic oracles.

All models here work on ``x`` of shape ``(d,)`` (or any trailing shape) and
physical time ``t``.  Conversions between the three forms rely on
``x = alpha_t * x0 + sigma_t * xT`` and
``score = -x / sigma_t**2 + (alpha_t / sigma_t**2) * x0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, special

from .schedules import NoiseSchedule, Parameterization

__all__ = [
    "CallableModel",
    "GaussianDataModel",
    "GaussianMixtureModel",
    "PredictionModel",
    "convert",
    "exact_flow",
    "mixture_posterior_mean_quadrature",
    "pf_ode_velocity",
    "reference_flow",
]

Array = NDArray[np.float64]


class PredictionModel(Protocol):
    """Anything that predicts ``x0|t`` or ``xT|t`` from ``(t, x)``."""

    parameterization: Parameterization
    schedule: NoiseSchedule

    def __call__(self, t: float, x: Array) -> Array: ...


@dataclass(frozen=True)
class CallableModel:
    """Wrap a user function ``fn(t, x)`` as a :class:`PredictionModel`."""

    fn: Callable[[float, Array], Array]
    parameterization: Parameterization
    schedule: NoiseSchedule
    dim: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))

    def __call__(self, t: float, x: Array) -> Array:
        return np.asarray(self.fn(t, x), dtype=np.float64)


def _alpha_sigma(schedule: NoiseSchedule, t: float) -> tuple[float, float]:
    return float(schedule.alpha(t)), float(schedule.sigma(t))


def convert(
    model: PredictionModel,
    target: Parameterization | str,
    t: float,
    x: ArrayLike,
) -> Array:
    """Evaluate ``model`` and express the result as ``target``.

    ``target`` is ``data``, ``noise`` or ``score``.
    """
    xv = np.asarray(x, dtype=np.float64)
    alpha, sigma = _alpha_sigma(model.schedule, t)
    if sigma == 0.0:
        raise ZeroDivisionError("conversion is singular where sigma_t = 0")
    raw = model(t, xv)
    src = Parameterization(model.parameterization)
    tgt = target if target == "score" else Parameterization(target)
    if tgt == src:
        return raw
    x0 = raw if src is Parameterization.DATA else (xv - sigma * raw) / alpha
    if tgt == "score":
        return (alpha * x0 - xv) / (sigma * sigma)
    if tgt is Parameterization.DATA:
        return x0
    return (xv - alpha * raw) / sigma


@dataclass(frozen=True)
class GaussianDataModel:
    """Data distribution ``N(mu, s^2 I)`` pushed through the VP schedule.

    The marginal at time ``t`` is ``N(alpha_t mu, (alpha_t^2 s^2 + sigma_t^2) I)``
    and the posterior mean of ``x0`` given ``x_t = x`` is
    ``mu + alpha_t s^2 / (alpha_t^2 s^2 + sigma_t^2) * (x - alpha_t mu)``.
    """

    schedule: NoiseSchedule
    mu: Array
    s: float = 1.0
    parameterization: Parameterization = Parameterization.DATA

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64)).copy()
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))
        if not self.s > 0.0:
            raise ValueError("s must be positive")

    @classmethod
    def unit(cls, schedule: NoiseSchedule, dim: int, parameterization: Parameterization | str = "data") -> "GaussianDataModel":
        return cls(schedule, np.zeros(dim), 1.0, Parameterization(parameterization))

    @property
    def dim(self) -> int:
        return self.mu.size

    def with_parameterization(self, parameterization: Parameterization | str) -> "GaussianDataModel":
        return GaussianDataModel(self.schedule, self.mu, self.s, Parameterization(parameterization))

    def marginal_std(self, t: float) -> float:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        return float(np.sqrt(alpha * alpha * self.s * self.s + sigma * sigma))

    def data_prediction(self, t: float, x: ArrayLike) -> Array:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        s2 = self.s * self.s
        gain = alpha * s2 / (alpha * alpha * s2 + sigma * sigma)
        return self.mu + gain * (np.asarray(x, dtype=np.float64) - alpha * self.mu)

    def noise_prediction(self, t: float, x: ArrayLike) -> Array:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        xv = np.asarray(x, dtype=np.float64)
        return (xv - alpha * self.data_prediction(t, xv)) / sigma

    def score(self, t: float, x: ArrayLike) -> Array:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        xv = np.asarray(x, dtype=np.float64)
        return (alpha * self.data_prediction(t, xv) - xv) / (sigma * sigma)

    def __call__(self, t: float, x: Array) -> Array:
        if self.parameterization is Parameterization.DATA:
            return self.data_prediction(t, x)
        return self.noise_prediction(t, x)


@dataclass(frozen=True)
class GaussianMixtureModel:
    """Isotropic Gaussian mixture ``sum_k w_k N(mu_k, s_k^2 I)`` as data law.

    The posterior mean conditions each component in closed form and weights
    the results by the component responsibilities at ``x_t``.
    """

    schedule: NoiseSchedule
    weights: Array
    means: Array
    stds: Array
    parameterization: Parameterization = Parameterization.DATA
    _log_w: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        sd = np.asarray(self.stds, dtype=np.float64).ravel()
        if not (w.size == mu.shape[0] == sd.size):
            raise ValueError("weights, means and stds need one entry per component")
        if np.any(w <= 0.0) or np.any(sd <= 0.0):
            raise ValueError("weights and stds must be positive")
        w = w / w.sum()
        for arr in (w, mu, sd):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)
        object.__setattr__(self, "_log_w", np.log(w))
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def responsibilities(self, t: float, x: ArrayLike) -> Array:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        xv = np.asarray(x, dtype=np.float64)
        var = alpha * alpha * self.stds**2 + sigma * sigma
        sq = np.sum((xv[None, :] - alpha * self.means) ** 2, axis=1)
        logp = self._log_w - 0.5 * sq / var - 0.5 * self.dim * np.log(2.0 * np.pi * var)
        return np.exp(logp - special.logsumexp(logp))

    def data_prediction(self, t: float, x: ArrayLike) -> Array:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        xv = np.asarray(x, dtype=np.float64)
        s2 = self.stds**2
        gain = alpha * s2 / (alpha * alpha * s2 + sigma * sigma)
        comp = self.means + gain[:, None] * (xv[None, :] - alpha * self.means)
        return self.responsibilities(t, xv) @ comp

    def noise_prediction(self, t: float, x: ArrayLike) -> Array:
        alpha, sigma = _alpha_sigma(self.schedule, t)
        xv = np.asarray(x, dtype=np.float64)
        return (xv - alpha * self.data_prediction(t, xv)) / sigma

    def __call__(self, t: float, x: Array) -> Array:
        if self.parameterization is Parameterization.DATA:
            return self.data_prediction(t, x)
        return self.noise_prediction(t, x)


def mixture_posterior_mean_quadrature(model: GaussianMixtureModel, t: float, x: float) -> float:
    """``E[X0 | X_t = x]`` for a one-dimensional mixture by adaptive quadrature.

    Independent of the closed-form conditioning; used as a cross-check.
    """
    if model.dim != 1:
        raise ValueError("quadrature oracle is one-dimensional")
    alpha, sigma = _alpha_sigma(model.schedule, t)
    mus = model.means[:, 0]

    def prior(x0: float) -> float:
        return float(np.sum(model.weights * np.exp(-0.5 * ((x0 - mus) / model.stds) ** 2) / model.stds))

    def lik(x0: float) -> float:
        return float(np.exp(-0.5 * ((x - alpha * x0) / sigma) ** 2))

    lo = float(np.min(mus - 12.0 * model.stds))
    hi = float(np.max(mus + 12.0 * model.stds))
    breaks = sorted(set(mus.tolist()) | {x / alpha})
    breaks = [b for b in breaks if lo < b < hi]
    num, _ = integrate.quad(lambda u: u * prior(u) * lik(u), lo, hi, points=breaks or None, limit=400, epsabs=0.0, epsrel=1e-12)
    den, _ = integrate.quad(lambda u: prior(u) * lik(u), lo, hi, points=breaks or None, limit=400, epsabs=0.0, epsrel=1e-12)
    return num / den


def pf_ode_velocity(model: PredictionModel, t: float, x: ArrayLike) -> Array:
    """Probability-flow velocity written with the data prediction:
    ``dx/dt = (sigma'/sigma) x + (alpha' - alpha sigma'/sigma) x0|t``."""
    schedule = model.schedule
    alpha, sigma = _alpha_sigma(schedule, t)
    beta = float(schedule.beta(t))
    dalpha = -0.5 * beta * alpha
    dsig_over_sig = 0.5 * beta * alpha * alpha / (sigma * sigma)
    xv = np.asarray(x, dtype=np.float64)
    x0 = convert(model, Parameterization.DATA, t, xv)
    return dsig_over_sig * xv + (dalpha - alpha * dsig_over_sig) * x0


def exact_flow(model: GaussianDataModel, t_from: float, t_to: float, x: ArrayLike) -> Array:
    """Closed-form PF-ODE flow map for a :class:`GaussianDataModel`.

    Each component follows ``x_t = alpha_t mu + m_t z`` with
    ``m_t = sqrt(alpha_t^2 s^2 + sigma_t^2)`` and ``z`` constant along the flow.
    """
    if not isinstance(model, GaussianDataModel):
        raise TypeError("exact_flow needs a GaussianDataModel")
    xv = np.asarray(x, dtype=np.float64)
    if t_from == t_to:
        return xv.copy()
    a_from = float(model.schedule.alpha(t_from))
    a_to = float(model.schedule.alpha(t_to))
    ratio = model.marginal_std(t_to) / model.marginal_std(t_from)
    return a_to * model.mu + ratio * (xv - a_from * model.mu)


def reference_flow(
    model: PredictionModel, t_from: float, t_to: float, x: ArrayLike, n_steps: int = 100_000
) -> Array:
    """Classical RK4 solve of the PF ODE in physical time (fallback oracle).

    Schedule quantities for every node and midpoint are evaluated up front in
    one vectorised pass; only the model is called inside the loop.
    """
    schedule = model.schedule
    y = np.asarray(x, dtype=np.float64).copy()
    ts = np.linspace(t_from, t_to, 2 * n_steps + 1)
    alpha = np.asarray(schedule.alpha(ts))
    sigma = np.asarray(schedule.sigma(ts))
    beta = np.asarray(schedule.beta(ts))
    lin = 0.5 * beta * alpha * alpha / (sigma * sigma)
    src = -0.5 * beta * alpha - alpha * lin
    if isinstance(model, GaussianDataModel):
        s2 = model.s * model.s
        gain = alpha * s2 / (alpha * alpha * s2 + sigma * sigma)

        def x0_at(k: int, z: Array) -> Array:
            return model.mu + gain[k] * (z - alpha[k] * model.mu)
    else:
        def x0_at(k: int, z: Array) -> Array:
            return convert(model, Parameterization.DATA, float(ts[k]), z)

    def vel(k: int, z: Array) -> Array:
        return lin[k] * z + src[k] * x0_at(k, z)

    for n in range(n_steps):
        k0, km, k1 = 2 * n, 2 * n + 1, 2 * n + 2
        h = float(ts[k1] - ts[k0])
        v1 = vel(k0, y)
        v2 = vel(km, y + 0.5 * h * v1)
        v3 = vel(km, y + 0.5 * h * v2)
        v4 = vel(k1, y + h * v3)
        y = y + (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
    return y
