"""Grids, spectral calculus, norms, ODE integration, quadrature and fitting.

Everything here is pure: functions never mutate their inputs and there is no
module-level state.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import conventions

BOUNDARY_MASS_THRESHOLD = 1e-8


class BoundaryMassWarning(UserWarning):
    """Too much mass near the edge of the periodic box."""


class IntegrationError(RuntimeError):
    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time t={last_time:.6g})")
        self.last_time = last_time


class QuadratureError(RuntimeError):
    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message}: estimate={estimate!r}, error={error!r}")
        self.estimate = estimate
        self.error = error


# --------------------------------------------------------------------------
# grids and fields


@dataclass(frozen=True)
class UniformGrid:
    """Periodic box ``[-L, L)^dim`` with ``N`` points per axis."""

    dim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        n = self.points_per_axis
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if n < 8 or n & (n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {n}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def frequencies(self) -> np.ndarray:
        return conventions.wavenumbers(self.points_per_axis, self.spacing)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable (sparse) coordinate arrays, one per axis."""
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def freq_coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.frequencies] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def radius_sq(self) -> np.ndarray:
        return sum(c**2 for c in self.coords) * np.ones(self.shape)

    @cached_property
    def freq_sq(self) -> np.ndarray:
        return sum(k**2 for k in self.freq_coords) * np.ones(self.shape)

    def points(self) -> np.ndarray:
        """Dense array of node coordinates with shape ``grid.shape + (dim,)``."""
        return np.stack(np.broadcast_arrays(*self.coords), axis=-1)

    def outer_shell(self, fraction: float = 0.05) -> np.ndarray:
        """Boolean mask of nodes within ``fraction * L`` of the box boundary (sup-norm)."""
        inner = (1.0 - fraction) * self.half_width
        mask = np.zeros(self.shape, dtype=bool)
        for c in self.coords:
            mask |= np.broadcast_to(np.abs(c) >= inner, self.shape)
        return mask


@dataclass
class ComplexField:
    grid: UniformGrid
    values: np.ndarray
    time_stamp: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def with_values(self, values, time_stamp=None) -> "ComplexField":
        t = self.time_stamp if time_stamp is None else time_stamp
        return ComplexField(self.grid, values, t)

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy(), self.time_stamp)


@dataclass(frozen=True)
class TimeMesh:
    t_start: float
    t_end: float
    dt: float
    sample_times: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("t_start must be < t_end")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        samples = tuple(float(s) for s in self.sample_times) or (self.t_start, self.t_end)
        eps = 1e-12 * max(1.0, abs(self.t_start), abs(self.t_end))
        if any(s < self.t_start - eps or s > self.t_end + eps for s in samples):
            raise ValueError("sample_times must lie in [t_start, t_end]")
        if any(b < a for a, b in zip(samples, samples[1:])):
            raise ValueError("sample_times must be ordered")
        object.__setattr__(self, "sample_times", samples)

    @classmethod
    def uniform(cls, t_start: float, t_end: float, dt: float, n_samples: int) -> "TimeMesh":
        return cls(t_start, t_end, dt, tuple(np.linspace(t_start, t_end, n_samples)))


# --------------------------------------------------------------------------
# norms and derivatives


def lp_norm(f: ComplexField | np.ndarray, p: float, grid: UniformGrid | None = None) -> float:
    if isinstance(f, ComplexField):
        grid, values = f.grid, f.values
    else:
        values = f
    return float((grid.cell_volume * np.sum(np.abs(values) ** p)) ** (1.0 / p))


def l2_norm(f: ComplexField) -> float:
    """``(dy^d * sum |f|^2)^(1/2)``."""
    return float(math.sqrt(f.grid.cell_volume * np.sum(np.abs(f.values) ** 2)))


def spectral_l2_norm(f: ComplexField) -> float:
    coeffs = conventions.forward(f.values)
    return float(math.sqrt(f.grid.cell_volume * np.sum(np.abs(coeffs) ** 2) / f.values.size))


def boundary_mass_fraction(f: ComplexField, fraction: float = 0.05) -> float:
    density = np.abs(f.values) ** 2
    total = density.sum()
    if total == 0:
        return 0.0
    return float(density[f.grid.outer_shell(fraction)].sum() / total)


def check_boundary_mass(f: ComplexField, threshold: float = BOUNDARY_MASS_THRESHOLD) -> float:
    frac = boundary_mass_fraction(f)
    if frac > threshold:
        warnings.warn(
            f"boundary mass fraction {frac:.3e} exceeds {threshold:.1e} at t={f.time_stamp:.4g}",
            BoundaryMassWarning,
            stacklevel=2,
        )
    return frac


def spectral_derivative(f: ComplexField, axis: int, order: int = 1) -> ComplexField:
    """``d^order f / dy_axis^order`` computed in Fourier space (periodic)."""
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.grid.dim}")
    ik = (1j * f.grid.freq_coords[axis]) ** order
    return f.with_values(conventions.inverse(ik * conventions.forward(f.values)))


def gradient(f: ComplexField) -> list[np.ndarray]:
    coeffs = conventions.forward(f.values)
    return [conventions.inverse(1j * k * coeffs) for k in f.grid.freq_coords]


def sigma_norm(f: ComplexField, threshold: float = BOUNDARY_MASS_THRESHOLD) -> float:
    """``||f|| + ||grad f|| + ||<y> f||`` with a spectral gradient.

    Emits :class:`BoundaryMassWarning` when the outer 5% shell carries more
    than ``threshold`` of the mass, since the periodic gradient is then
    unreliable.
    """
    check_boundary_mass(f, threshold)
    vol = f.grid.cell_volume
    grad_sq = sum(np.sum(np.abs(g) ** 2) for g in gradient(f))
    weighted = np.sum((1.0 + f.grid.radius_sq) * np.abs(f.values) ** 2)
    return l2_norm(f) + math.sqrt(vol * grad_sq) + math.sqrt(vol * weighted)


# --------------------------------------------------------------------------
# ODE integration


LOCAL_TOL_FACTOR = 1e-2
MIN_STEP_TOL = 3e-14


@dataclass
class OdeTrajectory:
    times: np.ndarray
    states: np.ndarray  # shape (n_times, n_state)
    dense: Callable[[float], np.ndarray]
    n_steps: int


def integrate_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    mesh: TimeMesh,
    tol: float,
    backward: bool = False,
    events=None,
    max_step: float = np.inf,
) -> OdeTrajectory:
    """Adaptive 8th-order Runge-Kutta (DOP853) with dense output.

    ``tol`` is the accuracy wanted for the whole run; each step is held to
    ``LOCAL_TOL_FACTOR * tol`` (floored at ``MIN_STEP_TOL``) so that error
    accumulated over long windows stays near ``tol``.  ``max_step`` bounds the
    step for right-hand sides that vanish to rounding away from a compact
    region, where the error estimate alone would step straight over it.

    Forward integration starts at ``mesh.t_start``; with ``backward=True`` the
    initial state is taken at ``mesh.t_end`` and the integration runs toward
    ``mesh.t_start``.  States are returned at ``mesh.sample_times`` in
    increasing time order either way.
    """
    y0 = np.atleast_1d(np.asarray(y0))
    t0, t1 = (mesh.t_end, mesh.t_start) if backward else (mesh.t_start, mesh.t_end)
    samples = np.asarray(mesh.sample_times, dtype=float)
    t_eval = samples[::-1] if backward else samples
    # dense output clipping guards against round-off at the window ends
    t_eval = np.clip(t_eval, mesh.t_start, mesh.t_end)
    step_tol = max(tol * LOCAL_TOL_FACTOR, MIN_STEP_TOL)
    sol = solve_ivp(
        rhs,
        (t0, t1),
        y0,
        method="DOP853",
        rtol=step_tol,
        atol=step_tol,
        dense_output=True,
        events=events,
        max_step=max_step,
    )
    if sol.status == -1:
        last = float(sol.t[-1]) if sol.t.size else t0
        raise IntegrationError(f"ODE integration failed: {sol.message}", last)
    t_stop = float(sol.t[-1])
    if sol.status == 1:
        # terminal event: keep only the samples that were reached
        reached = (t_eval <= t_stop) if t1 > t0 else (t_eval >= t_stop)
        t_eval = t_eval[reached]
    states = sol.sol(t_eval).T if t_eval.size else np.empty((0, y0.size), dtype=sol.y.dtype)
    times = t_eval
    if backward:
        states, times = states[::-1], times[::-1]
    out = OdeTrajectory(times=times, states=states, dense=sol.sol, n_steps=int(sol.nfev))
    out.events = sol.t_events
    out.status = sol.status
    out.final_time = t_stop
    return out


# --------------------------------------------------------------------------
# adaptive Gauss-Kronrod quadrature

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS = np.zeros(15)
_GAUSS[1::2] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(g, a: float, b: float):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    vals = np.asarray(g(mid + half * _NODES))
    kron = half * np.tensordot(_KRONROD, vals, axes=(0, 0))
    gauss = half * np.tensordot(_GAUSS, vals, axes=(0, 0))
    return kron, np.abs(kron - gauss)


def adaptive_quadrature(
    g: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-10,
    rtol: float = 0.0,
    max_intervals: int = 4000,
    componentwise: bool = False,
):
    """Globally adaptive G7-K15 quadrature of ``g`` over ``[a, b]``.

    ``g`` is called with a 1-d array of nodes and may return an array whose
    leading axis matches the nodes.  Vector-valued integrands are refined
    together; the error is measured in the max norm, or per component with
    ``componentwise=True`` (each component must then meet
    ``max(tol, rtol*|value|)`` on its own).  ``b = inf`` is mapped to
    ``(0, 1]`` by ``s = a + (1 - t) / t``.
    """
    if math.isinf(b):
        if b < 0:
            raise ValueError("lower limit must be finite; pass b=+inf for a half line")

        # the far end sits at t = 0, where floats keep full resolution
        def mapped(t):
            s = a + (1.0 - t) / t
            vals = np.asarray(g(s))
            jac = 1.0 / t**2
            return vals * jac.reshape((-1,) + (1,) * (vals.ndim - 1))

        return adaptive_quadrature(mapped, 0.0, 1.0, tol, rtol, max_intervals, componentwise)
    if a == b:
        return 0.0 * np.asarray(g(np.array([a])))[0]

    def scaled(err, total):
        if componentwise:
            return float(np.max(np.asarray(err) / np.maximum(tol, rtol * np.abs(total))))
        return float(np.max(err)) / max(tol, rtol * float(np.max(np.abs(total))))

    val, err = _gk15(g, a, b)
    heap = [(-scaled(err, val), 0, a, b, val, err)]
    total, total_err = val, err
    counter = 1
    while scaled(total_err, total) > 1.0:
        if len(heap) >= max_intervals:
            raise QuadratureError("adaptive quadrature did not converge",
                                  float(np.max(np.abs(total))), float(np.max(total_err)))
        _, _, lo, hi, v, e = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise QuadratureError("interval underflow in adaptive quadrature",
                                  float(np.max(np.abs(total))), float(np.max(total_err)))
        v1, e1 = _gk15(g, lo, mid)
        v2, e2 = _gk15(g, mid, hi)
        total = total - v + v1 + v2
        total_err = np.maximum(total_err - e + e1 + e2, 0.0)
        for vv, ee, l, h in ((v1, e1, lo, mid), (v2, e2, mid, hi)):
            heapq.heappush(heap, (-scaled(ee, total), counter, l, h, vv, ee))
            counter += 1
    total = sum(item[4] for item in heap)
    if not np.all(np.isfinite(total)):
        raise QuadratureError("adaptive quadrature produced a non-finite value",
                              float(np.max(np.abs(total))), float(np.max(total_err)))
    return float(total) if np.ndim(total) == 0 else total


# --------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    residual: float


def fit_power_law(pairs: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least-squares line through ``(log x, log y)``; residual is the RMS log deviation."""
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 points for a power-law fit, got {len(pairs)}")
    x, y = np.asarray(pairs, dtype=float).T
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = math.sqrt(float(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return PowerLawFit(float(slope), float(intercept), resid)


# --------------------------------------------------------------------------
# bootstrap predicate


@dataclass(frozen=True)
class BootstrapCertificate:
    """Outcome of checking the continuity (bootstrap) argument on samples.

    ``status`` is one of ``"certified"``, ``"conclusion_violated"``,
    ``"premise_violated"`` or ``"hypotheses_not_met"``.
    """

    status: str
    threshold: float
    bound: float
    premise_violations: tuple[int, ...] = ()
    conclusion_violations: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "certified"

    def __bool__(self) -> bool:
        return self.ok


def bootstrap_certificate(eps1: float, eps2: float, theta: float, f_samples) -> BootstrapCertificate:
    """Check ``f <= eps1 + eps2 f^theta`` and the resulting bound ``f <= theta/(theta-1) eps1``.

    The check is only conclusive when ``eps1 < (1 - 1/theta) (theta eps2)^(-1/(theta-1))``
    and ``f(0) <= (theta eps2)^(-1/(theta-1))``; if either fails the outcome is
    ``hypotheses_not_met`` and nothing else is checked.
    """
    if theta <= 1:
        raise ValueError("theta must exceed 1")
    f = np.asarray(f_samples, dtype=float)
    if f.size == 0 or np.any(f < 0):
        raise ValueError("f_samples must be a non-empty list of nonnegative numbers")
    threshold = (theta * eps2) ** (-1.0 / (theta - 1.0)) if eps2 > 0 else math.inf
    bound = theta / (theta - 1.0) * eps1
    if not (eps1 < (1.0 - 1.0 / theta) * threshold and f[0] <= threshold):
        return BootstrapCertificate("hypotheses_not_met", threshold, bound)
    premise = tuple(int(i) for i in np.flatnonzero(f > eps1 + eps2 * f**theta))
    if premise:
        return BootstrapCertificate("premise_violated", threshold, bound, premise_violations=premise)
    conclusion = tuple(int(i) for i in np.flatnonzero(f > bound))
    if conclusion:
        return BootstrapCertificate("conclusion_violated", threshold, bound, conclusion_violations=conclusion)
    return BootstrapCertificate("certified", threshold, bound)
