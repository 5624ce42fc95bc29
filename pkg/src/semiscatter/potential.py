"""Short-range potential families and the Morawetz weight construction."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import adaptive_quadrature

FAMILIES = ("zero", "inverse_power", "gaussian_bump")


@dataclass(frozen=True)
class PotentialSpec:
    """Smooth short-range potential.

    ``inverse_power``: ``V0 * (1 + |x/w|^2)^(-mu/2)``;
    ``gaussian_bump``: ``V0 * exp(-|x/w|^2)`` (decays faster than any power, so
    ``mu`` defaults to ``inf`` and can be set to whatever exponent a caller needs);
    ``zero``: ``V = 0``.
    """

    family: str = "zero"
    amplitude: float = 0.0
    mu: float = math.inf
    width: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}; expected one of {FAMILIES}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.family == "inverse_power" and not (1 < self.mu < math.inf):
            raise ValueError("inverse_power needs a finite decay exponent mu > 1")
        if not self.mu > 1:
            raise ValueError("short range requires mu > 1")
        ok, worst = decay_check(self)
        if not ok:
            raise ValueError(f"sampled decay check failed (worst growth ratio {worst:.3g})")

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or self.amplitude == 0.0

    def to_dict(self) -> dict:
        return {"family": self.family, "amplitude": self.amplitude, "mu": self.mu,
                "width": self.width, "dim": self.dim}


def potential_value(spec: PotentialSpec, x: np.ndarray) -> np.ndarray:
    """V at points ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    if spec.is_zero:
        return np.zeros(x.shape[:-1])
    r2 = np.sum(x**2, axis=-1) / spec.width**2
    if spec.family == "inverse_power":
        return spec.amplitude * (1.0 + r2) ** (-0.5 * spec.mu)
    return spec.amplitude * np.exp(-r2)


def eval_potential(spec: PotentialSpec, x):
    """Analytic ``(V, grad V, Hess V)`` at points of shape ``(..., d)`` (or a single point)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    eye = np.eye(d)
    if spec.is_zero:
        return np.zeros(x.shape[:-1]), np.zeros(x.shape), np.zeros(x.shape + (d,))
    w2 = spec.width**2
    r2 = np.sum(x**2, axis=-1) / w2
    outer = x[..., :, None] * x[..., None, :]
    if spec.family == "inverse_power":
        mu, v0 = spec.mu, spec.amplitude
        s = 1.0 + r2
        V = v0 * s ** (-0.5 * mu)
        coef = -mu * v0 / w2 * s ** (-0.5 * mu - 1.0)
        grad = coef[..., None] * x
        hess = coef[..., None, None] * (eye - (mu + 2.0) * outer / (w2 * s[..., None, None]))
    else:
        V = spec.amplitude * np.exp(-r2)
        grad = (-2.0 / w2 * V)[..., None] * x
        hess = V[..., None, None] * (-2.0 / w2 * eye + 4.0 / w2**2 * outer)
    return V, grad, hess


def decay_check(spec: PotentialSpec, n_radii: int = 200) -> tuple[bool, float]:
    """Falsification sampler for ``|V| <~ (1+r)^-mu`` and ``|grad V| <~ (1+r)^-mu-1``.

    The weighted quantities on the outer decade of radii must not exceed their
    maximum over the inner region by more than a factor 2.
    """
    if spec.is_zero:
        return True, 0.0
    mu = min(spec.mu, 40.0)
    radii = np.logspace(-2, 4, n_radii) * spec.width
    direction = np.zeros(spec.dim)
    direction[0] = 1.0
    pts = radii[:, None] * direction
    V, grad, _ = eval_potential(spec, pts)
    wv = np.abs(V) * (1 + radii) ** mu
    wg = np.linalg.norm(grad, axis=-1) * (1 + radii) ** (mu + 1)
    outer = radii >= 1e3 * spec.width
    worst = 0.0
    for arr in (wv, wg):
        inner_max = arr[~outer].max()
        if inner_max == 0:
            continue
        worst = max(worst, arr[outer].max() / inner_max)
    return worst <= 2.0, worst


def third_derivative(spec: PotentialSpec, x, h: float = 1e-4) -> np.ndarray:
    """Third-derivative tensor by central differences of the analytic Hessian."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.zeros((d, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        out[:, :, k] = (eval_potential(spec, x + e)[2] - eval_potential(spec, x - e)[2]) / (2 * h)
    return out


# --------------------------------------------------------------------------
# attraction bound


class AttractionCheck(NamedTuple):
    passed: bool
    margin: float


def _directions(dim: int, n_rays: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2 * np.pi * np.arange(n_rays) / n_rays
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    # Fibonacci sphere points, then pad with zeros for dim > 3
    i = np.arange(n_rays) + 0.5
    z = 1 - 2 * i / n_rays
    phi = np.pi * (3 - math.sqrt(5)) * i
    rho = np.sqrt(1 - z**2)
    dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    if dim > 3:
        dirs = np.concatenate([dirs, np.zeros((n_rays, dim - 3))], axis=-1)
    return dirs


def attraction_bound_check(spec: PotentialSpec, M: float, radial_samples: int = 200,
                           n_rays: int = 64) -> AttractionCheck:
    """Sample ``(x/|x| . grad V)_+ <= M (1+|x|)^(-mu-1)`` on rays and radii.

    ``margin`` is the smallest ratio of the allowed bound to the observed
    attractive part (``inf`` when no attraction is seen); the check passes iff
    ``margin >= 1``.
    """
    if not spec.mu > 2:
        raise ValueError("attraction bound needs mu > 2")
    dirs = _directions(spec.dim, n_rays)
    radii = np.logspace(-3, 3, radial_samples) * spec.width
    pts = radii[None, :, None] * dirs[:, None, :]
    _, grad, _ = eval_potential(spec, pts)
    radial = np.sum(grad * dirs[:, None, :], axis=-1)
    attractive = np.maximum(radial, 0.0)
    allowed = M * (1.0 + radii[None, :]) ** (-spec.mu - 1.0)
    hit = attractive > 0
    if not np.any(hit):
        return AttractionCheck(True, math.inf)
    allowed = np.broadcast_to(allowed, attractive.shape)
    margin = float(np.min(allowed[hit] / attractive[hit]))
    return AttractionCheck(margin >= 1.0, margin)


# --------------------------------------------------------------------------
# Morawetz weight


def _kernel(mu: float, power: float):
    return lambda s: s**power * (1.0 + s) ** (-mu - 1.0)


@dataclass(frozen=True)
class MorawetzWeight:
    """Radial weight ``h`` with ``h''' = -(K/r^4) int_0^r s^4 (1+s)^(-mu-1) ds``.

    ``h_prime_sup`` is ``lim_{r->inf} h'(r) = eta + K*C(mu)`` (h' increases),
    not just the largest sampled value.
    """

    mu: float
    K: float
    eta: float
    r: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    h4: np.ndarray
    C_of_mu: float
    M_threshold: float
    h_prime_sup: float

    def invariant_violations(self) -> dict[str, int]:
        return {
            "h1_negative": int(np.sum(self.h1 < 0)),
            "h2_negative": int(np.sum(self.h2 < 0)),
            "h2_condition": int(np.sum(self.h2 + 2.0 / self.r * self.h1 < self.eta / self.r * (1 - 1e-12))),
            "h1_above_sup": int(np.sum(self.h1 > self.h_prime_sup * (1 + 1e-9))),
        }


def default_weight_constant(mu: float, eta: float = 1.0) -> float:
    C, _ = morawetz_threshold(mu)
    return 8.0 * eta * max(1.0, 1.0 / (4.0 * C))


def _partial_integrals(f, r, rtol):
    # int_0^r f = r * int_0^1 f(r v) dv for the whole batch of r at once
    inner = adaptive_quadrature(lambda v: f(v[:, None] * r[None, :]), 0.0, 1.0,
                                tol=1e-300, rtol=rtol, componentwise=True)
    return r * inner


def _tail_integrals(f, r, rtol):
    # int_r^inf f with the far end mapped to t = 0
    def integrand(t):
        return f(r[None, :] + ((1.0 - t) / t)[:, None]) / t[:, None] ** 2

    return adaptive_quadrature(integrand, 0.0, 1.0, tol=1e-300, rtol=rtol, componentwise=True)


def morawetz_weight(mu: float, K: float | None = None, eta: float = 1.0, r_grid=None,
                    tol: float = 1e-12) -> MorawetzWeight:
    """Build the weight on a log grid (default 400 points on ``[1e-3, 1e3]``).

    Each derivative is an exact rearrangement (Fubini / integration by parts)
    of the defining nested integrals into one-dimensional integrals of
    ``s^k (1+s)^(-mu-1)``, each evaluated by adaptive quadrature:

    * ``h'''(r) = -K F4(r) / r^4`` with ``F4(r) = int_0^r s^4 (1+s)^(-mu-1)``
    * ``h''(r) = K [F4(r) / (3 r^3) + (1/3) int_r^inf s (1+s)^(-mu-1)]``
    * ``h'(r) = eta + K [F2(r)/2 - F4(r)/(2 r^2)] + r h''(r)``
    """
    if not mu > 2:
        raise ValueError("the weight needs h'' integrable, i.e. mu > 2")
    if not eta > 0:
        raise ValueError("eta must be positive")
    C, M_max = morawetz_threshold(mu)
    if K is None:
        K = 8.0 * eta * max(1.0, 1.0 / (4.0 * C))
    if not K > 0:
        raise ValueError("K must be positive")
    r = np.logspace(-3, 3, 400) if r_grid is None else np.asarray(r_grid, dtype=float)
    f4, f2, f1 = _kernel(mu, 4.0), _kernel(mu, 2.0), _kernel(mu, 1.0)
    F4 = _partial_integrals(f4, r, tol)
    F2 = _partial_integrals(f2, r, tol)
    B1 = _tail_integrals(f1, r, tol)
    h3 = -K * F4 / r**4
    h2 = K * (F4 / (3 * r**3) + B1 / 3.0)
    h1 = eta + K * (0.5 * F2 - F4 / (2 * r**2)) + r * h2
    h4 = -K * (1.0 + r) ** (-mu - 1.0) - 4.0 * h3 / r
    sup = eta + K * 0.5 * adaptive_quadrature(f2, 0.0, math.inf, 1e-15, rtol=1e-14)
    return MorawetzWeight(mu, K, eta, r, h1, h2, h3, h4, C, M_max, sup)


@functools.lru_cache(maxsize=64)
def morawetz_threshold(mu: float, tol: float = 1e-8):
    """``C(mu) = int_0^inf int_r^inf rho^-4 int_0^rho s^4 (1+s)^(-mu-1) ds drho dr``.

    Evaluated as three nested adaptive quadratures (vector-valued in the inner
    levels).  Returns ``(C, 1 / (4 C))``.
    """
    if not mu > 2:
        raise ValueError("C(mu) is finite only for mu > 2")
    f4 = _kernel(mu, 4.0)

    def F(rho):
        rho = np.asarray(rho, dtype=float)
        return _partial_integrals(f4, rho.ravel(), tol * 1e-2).reshape(rho.shape)

    def G(r):
        # int_r^inf rho^-4 F(rho) drho for a batch of r
        r = np.atleast_1d(np.asarray(r, dtype=float))

        def integrand(t):
            rho = r[None, :] + ((1.0 - t) / t)[:, None]
            return rho**-4 * F(rho) / t[:, None] ** 2

        return adaptive_quadrature(integrand, 0.0, 1.0, tol=1e-300, rtol=tol * 1e-1, componentwise=True)

    C = adaptive_quadrature(lambda r: G(r), 0.0, math.inf, tol=1e-300, rtol=tol)
    if not (C > 0 and math.isfinite(C)):
        raise RuntimeError(f"nested quadrature for C({mu}) returned {C}")
    return float(C), 1.0 / (4.0 * float(C))


def morawetz_condition_check(weight: MorawetzWeight, M: float) -> bool:
    """``h''''/4 + h'''/r = -(K/4)(1+r)^(-mu-1)`` exactly, so the condition is ``M sup h' <= K/4``."""
    return M * weight.h_prime_sup <= weight.K / 4.0


def nested_riemann_C(mu: float, n: int = 10_000, x_min: float = -20.0, x_max: float = 40.0) -> float:
    """Brute-force three-level trapezoid sum for ``C(mu)`` on the log grid ``r = e^x``.

    Independent of the adaptive path: each level is a cumulative trapezoid
    sum on the same ``n``-point grid (first level from 0, second toward
    infinity, third over the whole line).
    """
    x = np.linspace(x_min, x_max, n)
    r = np.exp(x)
    dx = x[1] - x[0]
    f4 = r**4 * (1 + r) ** (-mu - 1.0) * r  # times dr/dx
    F = np.concatenate([[0.0], np.cumsum(0.5 * (f4[1:] + f4[:-1]) * dx)])
    F += r[0] ** 5 / 5.0  # mass below the grid
    g = r**-4 * F * r
    tail = np.concatenate([np.cumsum((0.5 * (g[1:] + g[:-1]) * dx)[::-1])[::-1], [0.0]])
    outer = tail * r
    return float(np.sum(0.5 * (outer[1:] + outer[:-1]) * dx) + tail[0] * r[0])
