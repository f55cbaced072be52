"""Closed-form continuum checks for the local part and the fractional jump density.

``Log2D`` is the logarithmic potential ``u(x) = log(1/|x|) / (2 pi)`` on the
unit disk: ``-Delta u = delta_0``, energy density ``2 |grad u|^2`` and level
circles of radius ``r_a = exp(-2 pi a)``. ``Riesz1D`` carries the kernel
``c / |x-y|^(1+2 alpha)`` on an interval.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import ConfigError, NumericalError

TWO_PI = 2.0 * np.pi


def _radial(eta):
    """Promote a function of ``(x, y)`` (or ``None`` for 1) to arrays."""
    if eta is None:
        return lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    return eta


@dataclass(frozen=True)
class Log2D:
    tol: float = 1e-10
    theta_nodes: int = 64

    def potential(self, r):
        return np.log(1.0 / np.asarray(r, dtype=float)) / TWO_PI

    def grad_norm(self, r):
        return 1.0 / (TWO_PI * np.asarray(r, dtype=float))

    def level_radius(self, a):
        return np.exp(-TWO_PI * a)

    def angular_mean(self, eta, r):
        # trapezoid on a periodic integrand: spectrally accurate for smooth eta
        th = np.linspace(0.0, TWO_PI, self.theta_nodes, endpoint=False)
        r = np.atleast_1d(np.asarray(r, dtype=float))
        vals = eta(r[:, None] * np.cos(th), r[:, None] * np.sin(th))
        return np.asarray(vals, dtype=float).mean(axis=1)


@dataclass(frozen=True)
class Riesz1D:
    alpha: float
    c: float = 1.0
    extent: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")


def _quad(f, a, b, tol, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=tol, epsrel=tol, limit=200, points=points)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature on [{a}, {b}] failed: {exc}") from exc
    return val


def reconstruction_check(ex: Log2D, b: float, c: float, eta: Callable | None = None) -> float:
    """``(1/(c-b)) * int_{b <= u <= c} eta 2|grad u|^2 dm``.

    In polar coordinates the annulus ``r_c <= r <= r_b`` contributes
    ``int mean_theta(eta) * 2 |grad u|^2 * 2 pi r dr``; the substitution
    ``s = log r`` makes the radial integrand bounded.
    """
    if not 0 < b < c:
        raise ConfigError(f"need 0 < b < c, got b={b}, c={c}")
    eta = _radial(eta)
    rb, rc = ex.level_radius(b), ex.level_radius(c)

    def integrand(s):
        r = np.exp(s)
        return ex.angular_mean(eta, r)[0] * 2 * ex.grad_norm(r) ** 2 * TWO_PI * r * r

    return _quad(integrand, np.log(rc), np.log(rb), ex.tol) / (c - b)


def level_mass(ex: Log2D, a: float, eta: Callable | None = None) -> float:
    """``<l_a(u), eta> = int_{u=a} eta 2|grad u| dsigma`` (coarea line integral)."""
    eta = _radial(eta)
    r = ex.level_radius(a)
    return float(ex.angular_mean(eta, r)[0] * 2 * ex.grad_norm(r) * TWO_PI * r)


def occupation_check(ex: Log2D, phi: Callable, support: tuple[float, float], eta: Callable | None = None):
    """Both sides of ``int <l_a, eta> phi(a) da = <mu^c_<u>, phi(u) eta>``.

    The left side integrates coarea level masses over the level variable, the
    right side integrates the energy density ``2|grad u|^2`` over the disk in
    the radius. ``support`` bounds the levels where ``phi`` may be nonzero and
    must sit inside ``(0, inf)``.
    """
    lo, hi = map(float, support)
    if not (0 < lo < hi < np.inf):
        raise ConfigError("phi must have compact support inside (0, inf)")
    eta = _radial(eta)
    lhs = _quad(lambda a: level_mass(ex, a, eta) * phi(a), lo, hi, ex.tol)
    r_lo, r_hi = ex.level_radius(hi), ex.level_radius(lo)

    def area(s):
        r = np.exp(s)
        u = float(ex.potential(r))
        return phi(u) * ex.angular_mean(eta, r)[0] * 2 * ex.grad_norm(r) ** 2 * TWO_PI * r * r

    rhs = _quad(area, np.log(r_lo), np.log(r_hi), ex.tol)
    return lhs, rhs


def jk_integrand(u_y, u_x, k):
    """Convexity gap ``|u(y)-k| - |u(x)-k| - sign(u(x)-k)(u(y)-u(x))`` with sign(0) = -1."""
    s = np.where(u_x - k > 0, 1.0, -1.0)
    return np.abs(u_y - k) - np.abs(u_x - k) - s * (u_y - u_x)


def riesz_jk_quadrature(
    ex: Riesz1D,
    u: Callable[[np.ndarray], np.ndarray],
    k: float,
    x,
    breakpoints=None,
    tol: float = 1e-9,
    tail: float = np.inf,
):
    """Density of ``j_k(u)`` for the Riesz kernel, by adaptive quadrature.

    ``2c * int_R gap(y) / |x-y|^(1+2 alpha) dy`` where ``u`` is evaluated on
    all of ``R``. ``breakpoints`` (e.g. lattice nodes of an interpolated
    profile) split the interval; the exterior half-lines are integrated
    separately and a non-integrable tail raises.
    """
    lo, hi = ex.extent
    p = 1 + 2 * ex.alpha
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    pts = np.unique(np.concatenate([[lo, hi], [] if breakpoints is None else np.asarray(breakpoints, float)]))
    pts = pts[(pts >= lo) & (pts <= hi)]
    out = np.empty(len(xs))
    for i, xi in enumerate(xs):
        ux = float(u(np.array([xi]))[0])

        def f(y):
            uy = float(u(np.array([y]))[0])
            return jk_integrand(uy, ux, k) / abs(xi - y) ** p

        total = 0.0
        knots = np.unique(np.concatenate([pts, [xi]]))
        for a, b in zip(knots[:-1], knots[1:]):
            # cells touching x: the gap vanishes to second order unless k is crossed
            total += _quad(f, a, b, tol)
        total += _quad(f, -tail, lo, tol) + _quad(f, hi, tail, tol)
        out[i] = 2 * ex.c * total
    return out


def interpolate_lattice(positions, values, extent):
    """Piecewise-linear interpolant of node values, zero outside ``extent``.

    Values at the interval ends are taken as 0 (the Dirichlet exterior).
    """
    lo, hi = extent
    xp = np.concatenate([[lo], np.asarray(positions, float).ravel(), [hi]])
    fp = np.concatenate([[0.0], np.asarray(values, float), [0.0]])

    def u(y):
        y = np.asarray(y, dtype=float)
        return np.where((y < lo) | (y > hi), 0.0, np.interp(y, xp, fp))

    return u, xp
