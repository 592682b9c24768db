"""Closed forms: Lambert W_{-1}, competitive ratios, exponential penalties,
beta integrals over step quantiles, and the canonical single-resource allocation.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

E = math.e
INV_E = 1.0 / E
F_BREAK_GEN = (E - 2.0) / 2.0
F_BREAK_DET = 1.0 / 3.0


def lambert_w_minus1(x):
    """Real branch W_{-1} on [-1/e, 0), accurate to 1e-12 relative residual."""
    x = float(x)
    if not (-INV_E - 1e-15 <= x < 0.0):
        raise ValueError(f"lambert_w_minus1 needs -1/e <= x < 0, got {x!r}")
    if x <= -INV_E:
        return -1.0
    p2 = 2.0 * (E * x + 1.0)
    if p2 < 0.5:
        # branch-point series in p = -sqrt(2(ex+1))
        p = -math.sqrt(max(p2, 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        w = l1 - l2 + l2 / l1
    for _ in range(50):
        ew = math.exp(w)
        r = w * ew - x
        if r == 0.0:
            break
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = r / (ew * wp1 - (w + 2.0) * r / (2.0 * wp1))
        w_new = w - step
        if w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        if abs(w_new - w) <= 1e-16 * abs(w_new):
            w = w_new
            break
        w = w_new
    return w


def gamma_gen(f):
    """Optimal competitive ratio of the fractional / randomized problem."""
    if f < 0:
        raise ValueError("f must be nonnegative")
    if f <= F_BREAK_GEN:
        return E / (E - (1.0 + f))
    return -lambert_w_minus1(-1.0 / (E * (1.0 + f)))


def gamma_det(f):
    """Optimal competitive ratio of deterministic integral algorithms."""
    if f < 0:
        raise ValueError("f must be nonnegative")
    if f <= F_BREAK_DET:
        return 2.0 / (1.0 - f)
    return 1.0 + 2.0 * f + 2.0 * math.sqrt(f * (1.0 + f))


def w_hat_star(f):
    """Spread of the canonical allocation: mass lives on [w_max / w_hat, w_max]."""
    if f < 0:
        raise ValueError("f must be nonnegative")
    if f == 0:
        return 1.0
    return -(1.0 + f) * lambert_w_minus1(-1.0 / (E * (1.0 + f)))


def det_tau(f):
    if f < 0:
        raise ValueError("f must be nonnegative")
    if f <= F_BREAK_DET:
        return (1.0 + f) / (1.0 - f)
    return 1.0 + f + math.sqrt(f * (1.0 + f))


@dataclass(frozen=True)
class PenaltySpec:
    """Psi(y) = tau * (lam**y - 1)."""

    lam: float
    tau: float

    def __post_init__(self):
        if not (self.lam >= 1.0 and self.tau >= 0.0) or not math.isfinite(self.lam * self.tau):
            raise ValueError(f"invalid penalty lam={self.lam}, tau={self.tau}")

    @property
    def loglam(self):
        return math.log(self.lam)

    def psi(self, y):
        return self.tau * np.expm1(np.multiply(y, self.loglam))

    def dpsi(self, y):
        return self.tau * self.loglam * np.power(self.lam, y)

    def satisfies_theorem(self, f):
        return self.lam >= E * (1 - 1e-12) and self.tau >= (1.0 + f) / (self.lam - 1.0) * (1 - 1e-12)


def small_f_params(f):
    if not 0.0 <= f <= F_BREAK_GEN + 1e-12:
        raise ValueError(f"small_f_params needs 0 <= f <= (e-2)/2, got {f}")
    return PenaltySpec(E, (1.0 + f) / (E - (1.0 + f)))


def large_f_params(f):
    if f < F_BREAK_GEN - 1e-12:
        raise ValueError(f"large_f_params needs f >= (e-2)/2, got {f}")
    wh = w_hat_star(f)
    return PenaltySpec(wh, 1.0 / math.log(wh))


def matching_params(f):
    """The optimal parameterisation for buyback factor f."""
    return small_f_params(f) if f <= F_BREAK_GEN else large_f_params(f)


# ---------------------------------------------------------------------------
# integrals over a step quantile


def beta_of(dist, pen):
    """beta = integral of Psi(y(w)) dw, summed exactly over constant pieces."""
    return kernels.beta_exp(dist.W, dist.M, dist.h, dist.c, pen.lam, pen.tau)


def psi_integral(dist, pen, a, b):
    """Integral of psi(y(w)) = tau ln(lam) lam**y(w) over [a, b]."""
    if b <= a:
        return 0.0
    return pen.tau * pen.loglam * kernels.exp_sum(dist.W, dist.M, dist.h, dist.c, float(a), float(b), pen.lam)


def linear_penalty(y):
    """Psi(y) = y; only used to exercise penalty-agnostic code paths."""
    return y


def beta_generic(dist, psi):
    """beta for an arbitrary monotone penalty callable."""
    w = dist.weights
    levels = np.cumsum(dist.masses[::-1])[::-1]
    lows = np.concatenate(([0.0], w[:-1]))
    return float(sum((hi - lo) * float(psi(y)) for lo, hi, y in zip(lows, w, levels)))


# ---------------------------------------------------------------------------
# canonical allocation


@dataclass(frozen=True)
class CanonicalParams:
    w_hat: float

    def density(self, w):
        if self.w_hat <= 1.0:
            raise ValueError("density undefined for w_hat = 1")
        return 1.0 / (w * math.log(self.w_hat))

    def quantile(self, w):
        if w <= 1.0:
            return 1.0
        if w >= self.w_hat:
            return 0.0
        return 1.0 - math.log(w) / math.log(self.w_hat)


def canonical_quantile(params, w):
    return params.quantile(w)


def canonical_profit(f, w_max):
    """Profit of the canonical allocation when the largest weight seen is w_max."""
    if w_max < 0:
        raise ValueError("w_max must be nonnegative")
    wh = w_hat_star(f)
    if wh <= 1.0:
        return float(w_max)
    return w_max * (wh - 1.0 - f) / (wh * math.log(wh))
