"""Regularized incomplete beta function and the Beta-prior parameter solver."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import least_squares

from .errors import BetaSolveError

_TINY = 1e-300


def _betacf(a, b, x, max_iter=500, eps=1e-15):
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at ``x``."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_norm(b1: float, b2: float) -> float:
    """Normalization constant Gamma(b1) Gamma(b2) / Gamma(b1 + b2)."""
    return math.exp(math.lgamma(b1) + math.lgamma(b2) - math.lgamma(b1 + b2))


def _tail_residuals(b1, b2, gamma0, gamma1):
    return np.array([betainc(b1, b2, 0.1) - gamma0, (1.0 - betainc(b1, b2, 0.9)) - gamma1])


def solve_beta_params(gamma0: float, gamma1: float, tol: float = 1e-10):
    """Find 0 < b1, b2 < 1 with P(S < 0.1) = gamma0 and P(S > 0.9) = gamma1.

    Returns ``(b1, b2, eta)`` where ``eta`` is the Beta normalization constant.
    """
    if not (0.0 < gamma0 and 0.0 < gamma1 and gamma0 + gamma1 < 1.0):
        raise BetaSolveError(f"tail masses gamma0={gamma0}, gamma1={gamma1} are not feasible")

    def expit(z):
        return 1.0 / (1.0 + np.exp(-z))

    def fun(z):
        return _tail_residuals(expit(z[0]), expit(z[1]), gamma0, gamma1)

    best = None
    for start in ((0.0, 0.0), (-1.0, -2.0), (-2.0, -1.0), (1.0, 1.0), (-3.0, -3.0)):
        sol = least_squares(fun, np.array(start), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        res = np.max(np.abs(sol.fun))
        if best is None or res < best[0]:
            best = (res, sol.x)
        if res < tol:
            break
    res, z = best
    b1, b2 = float(expit(z[0])), float(expit(z[1]))
    if res >= tol or not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
        raise BetaSolveError(
            f"no Beta(b1, b2) with 0 < b1, b2 < 1 matches gamma0={gamma0}, gamma1={gamma1}; "
            f"best residuals {_tail_residuals(b1, b2, gamma0, gamma1).tolist()} at b1={b1:.6g}, b2={b2:.6g}"
        )
    return b1, b2, beta_norm(b1, b2)
