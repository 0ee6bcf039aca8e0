"""Independent high-precision reference computations.

Everything here is written from the defining formulas with mpmath at 60
digits and shares no code with the package: schedule quantities come from
the integrated rate, inverses from bracketed root finding instead of the
closed forms, and solver steps from the written-out update rules.  Several
tests freeze values produced by these functions; the functions stay here so
the frozen numbers can be regenerated.
"""

from __future__ import annotations

import mpmath as mp

mp.mp.dps = 60


def integrated_rate(kind: str, beta0: float, beta1: float, t) -> mp.mpf:
    """``int_0^t beta_s ds`` for the linear or scaled-linear rate."""
    t = mp.mpf(t)
    b0, b1 = mp.mpf(beta0), mp.mpf(beta1)
    if kind == "linear":
        return b0 * t + (b1 - b0) * t * t / 2
    r0, r1 = mp.sqrt(b0), mp.sqrt(b1)
    # beta_s = (r0 + s (r1 - r0))^2
    return ((r0 + t * (r1 - r0)) ** 3 - r0**3) / (3 * (r1 - r0))


def alpha(kind, beta0, beta1, t):
    return mp.exp(-integrated_rate(kind, beta0, beta1, t) / 2)


def sigma(kind, beta0, beta1, t):
    return mp.sqrt(1 - alpha(kind, beta0, beta1, t) ** 2)


def clock(kind, beta0, beta1, which: str, t):
    a, s = alpha(kind, beta0, beta1, t), sigma(kind, beta0, beta1, t)
    g = a / s
    return {"gamma": g, "rho": g * g, "chi": 1 / g, "lambda": mp.log(g)}[which]


def inverse_clock(kind, beta0, beta1, which: str, value, lo=mp.mpf("1e-12"), hi=mp.mpf(1)):
    """Solve ``clock(t) = value`` by bisection on the monotone clock (no closed form)."""
    target = mp.log(mp.mpf(value)) if which != "lambda" else mp.mpf(value)
    increasing = which == "chi"
    lo, hi = mp.mpf(lo), mp.mpf(hi)
    for _ in range(220):
        mid = (lo + hi) / 2
        c = clock(kind, beta0, beta1, which, mid)
        c = mp.log(c) if which != "lambda" else c
        if (c < target) == increasing:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def gaussian_posterior_mean(kind, beta0, beta1, mu, s, t, x):
    a, sg = alpha(kind, beta0, beta1, t), sigma(kind, beta0, beta1, t)
    mu, s, x = mp.mpf(mu), mp.mpf(s), mp.mpf(x)
    return mu + a * s * s / (a * a * s * s + sg * sg) * (x - a * mu)


def gaussian_flow(kind, beta0, beta1, mu, s, t_from, t_to, x):
    """Closed-form probability-flow map for ``N(mu, s^2)`` data in one dimension."""
    def m(t):
        a, sg = alpha(kind, beta0, beta1, t), sigma(kind, beta0, beta1, t)
        return mp.sqrt(a * a * s * s + sg * sg)

    mu, s, x = mp.mpf(mu), mp.mpf(s), mp.mpf(x)
    a0, a1 = alpha(kind, beta0, beta1, t_from), alpha(kind, beta0, beta1, t_to)
    return a1 * mu + m(t_to) / m(t_from) * (x - a0 * mu)


def mixture_posterior_mean(kind, beta0, beta1, weights, means, stds, t, x):
    """``E[X0 | X_t = x]`` by numerical quadrature of the 1-d mixture density."""
    a, sg = alpha(kind, beta0, beta1, t), sigma(kind, beta0, beta1, t)
    x = mp.mpf(x)

    def prior(x0):
        return sum(
            mp.mpf(w) * mp.npdf(x0, mp.mpf(m), mp.mpf(sd)) for w, m, sd in zip(weights, means, stds)
        )

    def lik(x0):
        return mp.npdf(x, a * x0, sg)

    lo = min(means) - 12 * max(stds)
    hi = max(means) + 12 * max(stds)
    pts = sorted({mp.mpf(lo), *(mp.mpf(m) for m in means), mp.mpf(hi)})
    num = mp.quad(lambda z: z * prior(z) * lik(z), pts)
    den = mp.quad(lambda z: prior(z) * lik(z), pts)
    return num / den


def dpmpp1_gaussian(kind, beta0, beta1, mu, s, t_n, t_p, x):
    """First-order data-prediction exponential step written in lambda."""
    a_p = alpha(kind, beta0, beta1, t_p)
    s_n, s_p = sigma(kind, beta0, beta1, t_n), sigma(kind, beta0, beta1, t_p)
    h = clock(kind, beta0, beta1, "lambda", t_p) - clock(kind, beta0, beta1, "lambda", t_n)
    x0 = gaussian_posterior_mean(kind, beta0, beta1, mu, s, t_n, x)
    return s_p / s_n * mp.mpf(x) - a_p * mp.expm1(-h) * x0


def rex_euler_data_step(kind, beta0, beta1, mu, s, zeta, t_n, t_p, x, x_hat):
    """One Rex step over explicit Euler in the data ODE (gamma clock, weight sigma).

    Returns ``(x_next, x_hat_next)`` from the two written-out update lines.
    """
    g_n = clock(kind, beta0, beta1, "gamma", t_n)
    g_p = clock(kind, beta0, beta1, "gamma", t_p)
    w_n, w_p = sigma(kind, beta0, beta1, t_n), sigma(kind, beta0, beta1, t_p)
    h = g_p - g_n
    x, x_hat, zeta = mp.mpf(x), mp.mpf(x_hat), mp.mpf(zeta)

    def f(t, y):
        return gaussian_posterior_mean(kind, beta0, beta1, mu, s, t, y)

    ratio = w_p / w_n
    x_next = ratio * (zeta * x + (1 - zeta) * x_hat) + w_p * h * f(t_n, x_hat)
    x_hat_next = ratio * x_hat - w_p * (-h) * f(t_p, x_next)
    return x_next, x_hat_next
