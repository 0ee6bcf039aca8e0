"""Linear stability of Rex and of the two-step reversible baselines.

Everything here works on the scalar test equation ``dx/dt = lam x`` with a
unit step, so ``z = h lam`` is the only parameter.  Rex is analysed through
its coupled ``(x, x_hat)`` recurrence whose companion matrix has trace
``Gamma`` and determinant ``zeta``; the baselines are iterated through their
own step functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .baselines import bdia_forward, euler_increment, obelm_forward
from .solver import DEFAULT_ZETA
from .tableaux import ButcherTableau, builtin, transfer_function

__all__ = [
    "BOUND",
    "MIN_ITERS",
    "StabilityMethod",
    "StabilityScan",
    "companion_radius",
    "empirical_stability",
    "gamma_stable",
    "scan",
    "transfer_gamma",
]

BOUND = 1e6
MIN_ITERS = 1000


class StabilityMethod(str, Enum):
    REX = "rex"
    BDIA = "bdia"
    OBELM = "obelm"


def _tableau(tableau: ButcherTableau | str) -> ButcherTableau:
    return builtin(tableau) if isinstance(tableau, str) else tableau


def _check_zeta(zeta: float) -> None:
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")


def transfer_gamma(tableau: ButcherTableau | str, z, zeta: float = DEFAULT_ZETA):
    """``Gamma = 1 + zeta - (1 - zeta) R(-z) - R(-z) R(z)``; vectorised over ``z``."""
    _check_zeta(zeta)
    r = transfer_function(_tableau(tableau))
    r_plus, r_minus = r(z), r(-np.asarray(z))
    return 1.0 + zeta - (1.0 - zeta) * r_minus - r_minus * r_plus


def gamma_stable(gamma, zeta: float = DEFAULT_ZETA):
    """Verdict of the trace criterion ``|Gamma| < 1 + zeta``."""
    return np.abs(gamma) < 1.0 + zeta


def companion_radius(gamma, zeta: float = DEFAULT_ZETA):
    """Spectral radius of the Rex companion matrix, roots of ``mu^2 - Gamma mu + zeta``.

    For real ``Gamma`` the radius is below one exactly when ``|Gamma| < 1 +
    zeta``.  For complex ``Gamma`` the two conditions differ, which is what
    this diagnostic exposes.
    """
    g = np.asarray(gamma, dtype=np.complex128)
    disc = np.sqrt(g * g - 4.0 * zeta)
    return np.maximum(np.abs((g + disc) / 2.0), np.abs((g - disc) / 2.0))


def _iterate_rex(r_plus, r_minus, zeta: float, n_iters: int):
    """Literal Rex wrapper with ``Psi_h(x) = R(z) x``; vectorised over ``z``.

    Returns ``max_n |x_n|``, capped once it exceeds :data:`BOUND`.
    """
    r_plus = np.asarray(r_plus, dtype=np.complex128)
    r_minus = np.asarray(r_minus, dtype=np.complex128)
    x = np.ones_like(r_plus)
    x_hat = np.ones_like(r_plus)
    peak = np.ones(r_plus.shape)
    live = np.ones(r_plus.shape, dtype=bool)
    for _ in range(n_iters):
        x_new = zeta * x + (1.0 - zeta) * x_hat + r_plus * x_hat
        x_hat = x_hat - r_minus * x_new
        x = np.where(live, x_new, 0.0)
        x_hat = np.where(live, x_hat, 0.0)
        peak = np.where(live, np.maximum(peak, np.abs(x)), peak)
        live &= peak < BOUND
        if not live.any():
            break
    return peak


def _iterate_two_step(step, z: complex, n_iters: int) -> float:
    """Run a two-step method bootstrapped by one Euler step; return ``max |x_n|``."""
    x_prev = np.array([1.0 + 0j])
    x_n = x_prev + z * x_prev
    peak = float(max(1.0, abs(x_n[0])))
    for n in range(1, n_iters):
        x_prev, x_n = x_n, step(float(n - 1), float(n), float(n + 1), x_prev, x_n)
        peak = max(peak, float(abs(x_n[0])))
        if not np.isfinite(peak) or peak >= BOUND:
            return peak
    return peak


def empirical_stability(
    method: StabilityMethod | str,
    z: complex,
    zeta: float = DEFAULT_ZETA,
    n_iters: int = MIN_ITERS,
    tableau: ButcherTableau | str = "euler",
) -> bool:
    """Iterate ``method`` on ``dx/dt = z x`` from ``x_0 = 1``; bounded iff ``max |x_n| < BOUND``.

    ``rex`` uses the coupled wrapper over ``tableau`` with the given ``zeta``.
    ``bdia`` uses an explicit Euler sub-step with ``gamma = 1``; ``obelm`` uses
    constant steps.  Both two-step methods are bootstrapped with one Euler
    step and ignore ``zeta``.
    """
    method = StabilityMethod(method)
    if n_iters < MIN_ITERS:
        raise ValueError(f"n_iters must be at least {MIN_ITERS}, got {n_iters}")
    z = complex(z)
    if method is StabilityMethod.REX:
        _check_zeta(zeta)
        r = transfer_function(_tableau(tableau))
        return bool(_iterate_rex(r(z), r(-z), zeta, n_iters) < BOUND)
    if method is StabilityMethod.BDIA:
        phi = euler_increment(lambda t, x: z * x)

        def step(t_prev, t_n, t_p, x_prev, x_n):
            return bdia_forward(phi, t_prev, t_n, t_p, x_prev, x_n, gamma=1.0)

    else:

        def step(t_prev, t_n, t_p, x_prev, x_n):
            return obelm_forward(lambda s, x: z * x, t_prev, t_n, t_p, x_prev, x_n)

    return bool(_iterate_two_step(step, z, n_iters) < BOUND)


@dataclass(frozen=True, eq=False)
class StabilityScan:
    """Rex stability verdicts on a rectangular grid of ``z = h lam``.

    Arrays are indexed ``[imag, real]``.  ``near_contour`` marks points within
    ``band`` of the ``|Gamma| = 1 + zeta`` contour.
    """

    real: NDArray[np.float64]
    imag: NDArray[np.float64]
    zeta: float
    tableau: str
    band: float
    gamma: NDArray[np.complex128]
    gamma_stable: NDArray[np.bool_]
    bounded: NDArray[np.bool_]
    near_contour: NDArray[np.bool_]
    radius: NDArray[np.float64]

    @property
    def points(self) -> NDArray[np.complex128]:
        return self.real[None, :] + 1j * self.imag[:, None]

    @property
    def agreement(self) -> float:
        """Fraction of off-band points where the two verdicts coincide."""
        off = ~self.near_contour
        if not off.any():
            return float("nan")
        return float(np.mean(self.gamma_stable[off] == self.bounded[off]))

    @property
    def radius_agreement(self) -> float:
        """Same as :attr:`agreement` but against the companion-matrix radius verdict."""
        off = ~self.near_contour
        return float(np.mean((self.radius[off] < 1.0) == self.bounded[off]))


def _near_contour(tableau: ButcherTableau, points, zeta: float, band: float, samples: int = 32):
    """Points whose ``band``-disc contains both sides of ``|Gamma| = 1 + zeta``."""
    centre = gamma_stable(transfer_gamma(tableau, points, zeta), zeta)
    near = np.zeros(points.shape, dtype=bool)
    for radius in (band / 2.0, band):
        for angle in np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False):
            shifted = points + radius * np.exp(1j * angle)
            near |= gamma_stable(transfer_gamma(tableau, shifted, zeta), zeta) != centre
    return near


def scan(
    real: NDArray[np.float64],
    imag: NDArray[np.float64],
    zeta: float = DEFAULT_ZETA,
    tableau: ButcherTableau | str = "euler",
    n_iters: int = MIN_ITERS,
    band: float = 0.05,
) -> StabilityScan:
    """Evaluate the Gamma criterion and the empirical iteration on a grid."""
    if n_iters < MIN_ITERS:
        raise ValueError(f"n_iters must be at least {MIN_ITERS}, got {n_iters}")
    tab = _tableau(tableau)
    real = np.asarray(real, dtype=np.float64)
    imag = np.asarray(imag, dtype=np.float64)
    points = real[None, :] + 1j * imag[:, None]
    gamma = transfer_gamma(tab, points, zeta)
    r = transfer_function(tab)
    bounded = _iterate_rex(r(points), r(-points), zeta, n_iters) < BOUND
    return StabilityScan(
        real=real,
        imag=imag,
        zeta=zeta,
        tableau=tab.name,
        band=band,
        gamma=gamma,
        gamma_stable=gamma_stable(gamma, zeta),
        bounded=bounded,
        near_contour=_near_contour(tab, points, zeta, band),
        radius=companion_radius(gamma, zeta),
    )
