"""Time-dependent quadratic Hamiltonians: Riccati flow, Gaussian propagation, adapted frames.

A "Q-curve" is any callable ``t -> (d, d)`` symmetric matrix;
:class:`~semiscatter.classical.HessianCurve` is the one produced by a
classical trajectory, and :class:`MatrixCurve` wraps plain functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import ComplexField, IntegrationError, TimeMesh, UniformGrid, fit_power_law, integrate_ode


@dataclass(frozen=True)
class MatrixCurve:
    """Q-curve from a function of time; ``zero(d)`` gives the free case."""

    fn: Callable[[float], np.ndarray]
    dim: int
    t_min: float = -math.inf
    t_max: float = math.inf

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.fn(t), dtype=float).reshape(self.dim, self.dim)

    @classmethod
    def zero(cls, dim: int) -> "MatrixCurve":
        z = np.zeros((dim, dim))
        return cls(lambda t: z, dim)


def curve_dim(Q) -> int:
    dim = getattr(Q, "dim", None)
    if dim is None:
        dim = np.asarray(Q(getattr(Q, "t_max", 0.0))).shape[0]
    return int(dim() if callable(dim) else dim)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


# --------------------------------------------------------------------------
# Riccati


class RiccatiBlowUp(IntegrationError):
    """``|M1|`` exceeded ``1/tol``: the Riccati solution has a finite-time singularity."""


@dataclass(frozen=True)
class RiccatiSolution:
    """``M1' + M1^2 + Q = 0`` sampled on ``times``.

    On the anchored branch (``t <= t0``) the unknown actually integrated is
    ``R(t) = t^2 (M1(t) - I/t)``, which stays bounded as ``t -> -inf`` when
    ``t^2 Q`` is integrable; ``asymptotic_residual`` is ``sup |R|`` over the
    samples of that branch.  ``R_at`` evaluates ``R`` densely there.
    """

    times: np.ndarray
    M1: np.ndarray
    t0: float
    asymptotic_residual: float
    R: np.ndarray
    R_at: Callable[[float], np.ndarray] = field(repr=False)
    blowup_time: float | None = None

    @property
    def dim(self) -> int:
        return self.M1.shape[-1]

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.M1 - np.swapaxes(self.M1, -1, -2))))


def _scaled_rhs(Q, d):
    # R = t^2 (M - I/t):  R' = -R^2 / t^2 - t^2 Q
    def rhs(t, y):
        R = y.reshape(d, d)
        dR = -(R @ R) / t**2 - t**2 * Q(t)
        return _sym(dR).ravel()

    return rhs


def integrate_scaled_riccati(Q, t_anchor: float, t_other: float, tol: float, sample_times=None):
    """Integrate ``R`` with ``R(t_anchor) = 0`` toward ``t_other`` (same sign, never crossing 0)."""
    if t_anchor == 0 or t_other == 0 or np.sign(t_anchor) != np.sign(t_other):
        raise ValueError("the scaled Riccati unknown is only defined on one side of t = 0")
    d = curve_dim(Q)
    lo, hi = min(t_anchor, t_other), max(t_anchor, t_other)
    samples = () if sample_times is None else tuple(sample_times)
    mesh = TimeMesh(lo, hi, 1.0, samples)
    return integrate_ode(_scaled_rhs(Q, d), np.zeros(d * d), mesh, tol, backward=(t_anchor == hi))


def riccati_solve(Q, t0: float = -20.0, T_end: float = -1e4, tol: float = 1e-10,
                  forward_to: float | None = None, n_samples: int = 400) -> RiccatiSolution:
    """Solve with ``M1(t0) = I/t0`` backward to ``T_end`` (and forward to ``forward_to``).

    The backward branch is sampled on a log grid in ``|t|``.  The optional
    forward branch integrates ``M1`` itself and stops with
    :class:`RiccatiBlowUp` (carrying the blow-up time) once ``|M1| > 1/tol``.
    """
    if not t0 <= -1:
        raise ValueError("anchor t0 must satisfy t0 <= -1")
    if not T_end <= t0:
        raise ValueError("T_end must lie at or before the anchor")
    d = curve_dim(Q)
    eye = np.eye(d)
    times = -np.geomspace(-T_end, -t0, n_samples) if T_end < t0 else np.array([t0])
    if T_end < t0:
        sol = integrate_scaled_riccati(Q, t0, T_end, tol, sample_times=times)
        R = sol.states.reshape(-1, d, d)
        dense = sol.dense
        R_at = lambda t: np.asarray(dense(t)).reshape(d, d)  # noqa: E731
    else:
        R = np.zeros((1, d, d))
        R_at = lambda t: np.zeros((d, d))  # noqa: E731
    M1 = eye[None] / times[:, None, None] + R / times[:, None, None] ** 2
    residual = float(np.max(np.linalg.norm(R, 2, axis=(1, 2))))
    blowup = None
    if forward_to is not None and forward_to > t0:
        limit = 1.0 / tol

        def rhs(t, y):
            M = y.reshape(d, d)
            return _sym(-(M @ M) - Q(t)).ravel()

        def blow(t, y):
            return limit - np.max(np.abs(y))

        blow.terminal = True
        fwd_times = np.linspace(t0, forward_to, n_samples)[1:]
        mesh = TimeMesh(t0, forward_to, 1.0, tuple(fwd_times))
        sol = integrate_ode(rhs, (eye / t0).ravel(), mesh, tol, events=blow)
        if sol.status == 1:
            blowup = float(sol.events[0][0])
            raise RiccatiBlowUp(f"Riccati solution blows up near t = {blowup:.6g}", blowup)
        times = np.concatenate([times, sol.times])
        M1 = np.concatenate([M1, sol.states.reshape(-1, d, d)])
    return RiccatiSolution(times, M1, t0, residual, R, R_at, blowup)


def dispersion_rate(ric: RiccatiSolution, n_fit: int = 60):
    """``h(t) = exp(1/2 int_{t0}^t tr M1)`` on the backward branch and its power-law exponent.

    ``log h = (d/2) log|t/t0| + 1/2 int_{t0}^t tr R(s) / s^2 ds``, the second
    term by quadrature of the dense ``R``.  The fit uses the last decade of
    the window (``|t|`` from ``|T_end|/10`` to ``|T_end|``).  Returns
    ``(times, h, PowerLawFit)``.
    """
    from scipy.integrate import quad

    d = ric.dim
    t0 = ric.t0
    T_end = float(ric.times[0])
    if not T_end < t0:
        raise ValueError("dispersion needs a backward branch")

    def corr(t):
        val, _ = quad(lambda s: np.trace(ric.R_at(s)) / s**2, t, t0, epsabs=1e-13, epsrel=1e-11,
                      limit=200)
        return -0.5 * val

    ts = ric.times[ric.times < t0]
    h = np.array([math.exp(0.5 * d * math.log(t / t0) + corr(t)) for t in ts])
    lo = max(abs(T_end) / 10.0, abs(t0))
    fit_t = -np.geomspace(lo, abs(T_end), n_fit)
    fit_h = [math.exp(0.5 * d * math.log(t / t0) + corr(t)) for t in fit_t]
    fit = fit_power_law(list(zip(-fit_t, fit_h)))
    return ts, h, fit


# --------------------------------------------------------------------------
# Gaussian propagation


@dataclass(frozen=True)
class GaussianState:
    """``u(y) = A exp(i/2 y^T Gamma y)`` with ``Im Gamma`` positive definite."""

    A: complex
    Gamma: np.ndarray
    time_stamp: float = 0.0

    def __post_init__(self):
        G = np.asarray(self.Gamma, dtype=complex)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("Gamma must be a square matrix")
        if np.max(np.abs(G - G.T)) > 1e-10 * max(1.0, np.max(np.abs(G))):
            raise ValueError("Gamma must be symmetric")
        if np.min(np.linalg.eigvalsh(_sym(G.imag))) <= 0:
            raise ValueError("Im Gamma must be positive definite")
        object.__setattr__(self, "Gamma", _sym(G))

    @property
    def dim(self) -> int:
        return self.Gamma.shape[0]

    def norm(self) -> float:
        det = np.linalg.det(self.Gamma.imag)
        return float(abs(self.A) * math.pi ** (self.dim / 4) * det ** (-0.25))

    def sample(self, grid: UniformGrid) -> ComplexField:
        phase = np.zeros(grid.shape, dtype=complex)
        ys = grid.coords
        for j in range(self.dim):
            for k in range(self.dim):
                phase = phase + self.Gamma[j, k] * ys[j] * ys[k]
        return ComplexField(grid, self.A * np.exp(0.5j * phase), self.time_stamp)

    @classmethod
    def standard(cls, dim: int, time_stamp: float = 0.0) -> "GaussianState":
        """``pi^(-d/4) exp(-|y|^2/2)``, unit L2 norm."""
        return cls(math.pi ** (-dim / 4), 1j * np.eye(dim), time_stamp)

    def free_evolved(self, s: float) -> "GaussianState":
        """Closed form of ``exp(i s Delta / 2)`` applied to this Gaussian."""
        d = self.dim
        B = np.eye(d) + s * self.Gamma
        G = _sym(self.Gamma @ np.linalg.inv(B))
        # principal branch per eigenvalue of B keeps the amplitude continuous in s
        lam = np.linalg.eigvals(B)
        A = self.A * np.prod(lam ** -0.5)
        return GaussianState(complex(A), G, self.time_stamp + s)


def _pack_gauss(A, G):
    return np.concatenate([[A.real, A.imag], G.real.ravel(), G.imag.ravel()])


def _unpack_gauss(y, d):
    A = y[0] + 1j * y[1]
    n = d * d
    G = (y[2:2 + n] + 1j * y[2 + n:2 + 2 * n]).reshape(d, d)
    return A, G


def gaussian_propagate(g0: GaussianState, Q, span: TimeMesh, tol: float = 1e-10) -> list[GaussianState]:
    """Exact Gaussian solutions of ``i u_t + Delta u / 2 = <Q(t) y, y> u / 2``.

    Integrates ``Gamma' + Gamma^2 + Q = 0`` and ``A' = -A tr(Gamma) / 2`` from
    ``span.t_start`` (where ``g0`` is taken to live) and returns the state at
    every sample time.
    """
    d = g0.dim

    def rhs(t, y):
        A, G = _unpack_gauss(y, d)
        dG = _sym(-(G @ G) - Q(t))
        dA = -0.5 * A * np.trace(G)
        return _pack_gauss(dA, dG)

    sol = integrate_ode(rhs, _pack_gauss(complex(g0.A), g0.Gamma), span, tol)
    out = []
    for t, y in zip(sol.times, sol.states):
        A, G = _unpack_gauss(y, d)
        if np.min(np.linalg.eigvalsh(_sym(G.imag))) <= 0:
            raise IntegrationError("Im Gamma lost positive definiteness", float(t))
        out.append(GaussianState(complex(A), G, float(t)))
    return out


# --------------------------------------------------------------------------
# adapted vector-field frames


@dataclass(frozen=True)
class VectorFieldFrame:
    """``K' + K^2 + Q = 0`` with ``t K -> I`` and ``W' = W K`` with ``W/t -> I`` as ``t -> sign*inf``.

    Sampled on the validity window (``[T, T_far]`` for ``+``, ``[-T_far, -T]``
    for ``-``); the conditions at infinity are imposed at ``sign*T_far``.
    """

    sign: int
    T: float
    T_far: float
    times: np.ndarray
    K: np.ndarray
    W: np.ndarray
    riccati_residual: float
    transport_residual: float

    def tK_residual(self) -> np.ndarray:
        d = self.K.shape[-1]
        return np.linalg.norm(self.times[:, None, None] * self.K - np.eye(d), 2, axis=(1, 2))

    def W_residual(self) -> np.ndarray:
        d = self.K.shape[-1]
        return np.linalg.norm(self.W / self.times[:, None, None] - np.eye(d), 2, axis=(1, 2))


def vector_field_frame(Q, sign: int, T: float, tol: float = 1e-10, T_far: float | None = None,
                       n_samples: int = 200) -> VectorFieldFrame:
    """Adapted frames ``K_sign, W_sign`` on ``|t| >= T``.

    With ``R = t^2 (K - I/t)`` and ``X = W / t`` the system reads
    ``R' = -R^2/t^2 - t^2 Q`` and ``X' = X R / t^2``; both are integrated
    inward from ``sign*T_far`` (default ``100 T``) with ``R = 0``, ``X = I``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not T > 0:
        raise ValueError("T must be positive")
    T_far = 100.0 * T if T_far is None else float(T_far)
    if not T_far > T:
        raise ValueError("T_far must exceed T")
    d = curve_dim(Q)
    n = d * d
    eye = np.eye(d)

    def rhs(t, y):
        R = y[:n].reshape(d, d)
        X = y[n:].reshape(d, d)
        dR = _sym(-(R @ R) / t**2 - t**2 * Q(t))
        dX = X @ R / t**2
        return np.concatenate([dR.ravel(), dX.ravel()])

    mag = np.geomspace(T, T_far, n_samples)
    times = np.sort(sign * mag)
    mesh = TimeMesh(float(times[0]), float(times[-1]), 1.0, tuple(times))
    y0 = np.concatenate([np.zeros(n), eye.ravel()])
    sol = integrate_ode(rhs, y0, mesh, tol, backward=(sign > 0))
    R = sol.states[:, :n].reshape(-1, d, d)
    X = sol.states[:, n:].reshape(-1, d, d)
    t = sol.times[:, None, None]
    K = eye[None] / t + R / t**2
    W = X * t

    # equation residuals by a fourth-order difference of the dense output
    def dense_KW(s):
        y = sol.dense(s)
        Rs, Xs = y[:n].reshape(d, d), y[n:].reshape(d, d)
        return eye / s + Rs / s**2, Xs * s

    ric_res, tr_res = 0.0, 0.0
    for s in sol.times[2:-2]:
        h = 1e-3 * abs(s)
        pts = [dense_KW(s + k * h) for k in (-2, -1, 1, 2)]
        dK = (pts[0][0] - 8 * pts[1][0] + 8 * pts[2][0] - pts[3][0]) / (12 * h)
        dW = (pts[0][1] - 8 * pts[1][1] + 8 * pts[2][1] - pts[3][1]) / (12 * h)
        Ks, Ws = dense_KW(s)
        ric_res = max(ric_res, float(np.max(np.abs(dK + Ks @ Ks + Q(s)))))
        tr_res = max(tr_res, float(np.max(np.abs(dW - Ws @ Ks))) / abs(s))
    return VectorFieldFrame(sign, float(T), T_far, sol.times, K, W, ric_res, tr_res)


__all__ = [
    "GaussianState",
    "MatrixCurve",
    "RiccatiBlowUp",
    "RiccatiSolution",
    "VectorFieldFrame",
    "dispersion_rate",
    "gaussian_propagate",
    "integrate_scaled_riccati",
    "riccati_solve",
    "vector_field_frame",
]
