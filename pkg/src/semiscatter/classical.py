"""Classical Hamiltonian flow, asymptotic data at ``t = -inf`` and the scattering map."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .numerics import IntegrationError, TimeMesh, fit_power_law, integrate_ode
from .potential import PotentialSpec, eval_potential, potential_value


class PicardError(RuntimeError):
    """The fixed-point iteration for the incoming asymptote stopped contracting."""


class NoScattering(RuntimeError):
    """The trajectory stays in a bounded region over the final quarter of the horizon."""


@dataclass(frozen=True)
class ClassicalTrajectory:
    """Sampled solution of ``q' = p, p' = -grad V(q), S' = |p|^2/2 - V(q)``.

    ``q_minus``/``p_minus`` are the incoming asymptotic data used to build the
    phase shift ``delta``; for trajectories launched from finite initial data
    they default to the initial point.  ``state_at`` evaluates the dense
    interpolant ``(q, p, S)`` anywhere on ``[times[0], times[-1]]``.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    S: np.ndarray
    spec: PotentialSpec
    q_minus: np.ndarray
    p_minus: np.ndarray
    state_at: Callable[[float], np.ndarray] = field(repr=False)
    residuals: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    @property
    def delta(self) -> np.ndarray:
        return self.S - 0.5 * (np.sum(self.q * self.p, axis=1) - float(self.q_minus @ self.p_minus))

    @property
    def energy(self) -> np.ndarray:
        return 0.5 * np.sum(self.p**2, axis=1) + potential_value(self.spec, self.q)

    def energy_drift(self) -> float:
        E = self.energy
        return float(np.max(np.abs(E - E[0])))

    def center(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        y = self.state_at(t)
        d = self.dim
        return y[:d], y[d:2 * d]


def _rhs(spec: PotentialSpec):
    def rhs(t, y):
        d = spec.dim
        q, p = y[:d], y[d:2 * d]
        V, grad, _ = eval_potential(spec, q)
        return np.concatenate([p, -grad, [0.5 * p @ p - V]])

    return rhs


def _exit_event(spec: PotentialSpec, sign: float):
    """Terminal event once a Gaussian-force trajectory has left for good.

    Beyond ``7 * width`` the force is below ``1e-21 * |V0| / width`` and the
    trajectory moves away, so the rest of the leg can be integrated without a
    step cap.  None when no cap is needed.
    """
    if spec.family != "gaussian_bump" or spec.is_zero:
        return None
    d, R = spec.dim, 7.0 * spec.width

    def leave(t, y):
        q, p = y[:d], y[d:2 * d]
        return min(float(np.linalg.norm(q)) - R, sign * float(q @ p))

    leave.terminal = True
    return leave


def _leg(spec, rhs, y0, mesh: TimeMesh, tol, backward):
    """One-sided integration; list of ``(times, states, lo, hi, dense)`` pieces."""
    event = _exit_event(spec, -1.0 if backward else 1.0)
    start = mesh.t_end if backward else mesh.t_start
    if event is None or event(start, y0) > 0:
        sol = integrate_ode(rhs, y0, mesh, tol, backward=backward)
        return [(sol.times, sol.states, mesh.t_start, mesh.t_end, sol.dense)]
    d = spec.dim
    # steps of at most a quarter of the time to cross the force region
    speed = max(float(np.linalg.norm(y0[d:2 * d])), 1e-3)
    sol = integrate_ode(rhs, y0, mesh, tol, backward=backward, events=event, max_step=0.25 * spec.width / speed)
    t_x = sol.final_time
    if sol.status != 1 or t_x == mesh.t_start or t_x == mesh.t_end:
        return [(sol.times, sol.states, mesh.t_start, mesh.t_end, sol.dense)]
    samples = np.asarray(mesh.sample_times)
    if backward:
        first = (sol.times, sol.states, t_x, mesh.t_end, sol.dense)
        rest = samples[samples < t_x]
        tail_mesh = TimeMesh(mesh.t_start, t_x, mesh.dt, tuple(rest) if rest.size else ())
    else:
        first = (sol.times, sol.states, mesh.t_start, t_x, sol.dense)
        rest = samples[samples > t_x]
        tail_mesh = TimeMesh(t_x, mesh.t_end, mesh.dt, tuple(rest) if rest.size else ())
    tail = integrate_ode(rhs, np.asarray(sol.dense(t_x)), tail_mesh, tol, backward=backward)
    keep = np.isin(tail.times, rest)
    return [first, (tail.times[keep], tail.states[keep], tail_mesh.t_start, tail_mesh.t_end, tail.dense)]


def _pack(spec, times, states, q_minus, p_minus, state_at, residuals):
    d = spec.dim
    return ClassicalTrajectory(
        times=np.asarray(times, dtype=float),
        q=states[:, :d].copy(),
        p=states[:, d:2 * d].copy(),
        S=states[:, 2 * d].copy(),
        spec=spec,
        q_minus=np.asarray(q_minus, dtype=float),
        p_minus=np.asarray(p_minus, dtype=float),
        state_at=state_at,
        residuals=dict(residuals),
    )


def _integrate_from(spec, y0, t0, mesh: TimeMesh, tol):
    """Integrate from state ``y0`` at ``t0`` over the whole mesh window (both sides of t0)."""
    if not mesh.t_start - 1e-12 <= t0 <= mesh.t_end + 1e-12:
        raise ValueError("initial time must lie in the mesh window")
    rhs = _rhs(spec)
    y0 = np.asarray(y0, dtype=float)
    samples = np.asarray(mesh.sample_times)
    pieces = []
    if t0 > mesh.t_start:
        back = samples[samples <= t0]
        back_mesh = TimeMesh(mesh.t_start, t0, mesh.dt, tuple(back) if back.size else ())
        pieces += _leg(spec, rhs, y0, back_mesh, tol, backward=True)
    if t0 < mesh.t_end:
        fwd = samples[samples >= t0]
        fwd_mesh = TimeMesh(t0, mesh.t_end, mesh.dt, tuple(fwd) if fwd.size else ())
        pieces += _leg(spec, rhs, y0, fwd_mesh, tol, backward=False)
    dense = [(p[2], p[3], p[4]) for p in pieces]
    times = np.concatenate([p[0] for p in pieces])
    states = np.concatenate([p[1] for p in pieces])
    # the initial time may appear in both halves
    times, keep = np.unique(times, return_index=True)
    states = states[keep]

    def state_at(t):
        for lo, hi, fn in dense:
            if lo - 1e-12 <= t <= hi + 1e-12:
                return np.asarray(fn(min(max(t, lo), hi)))
        raise ValueError(f"time {t} outside the integrated window")

    return times, states, state_at


def flow_from_initial(spec: PotentialSpec, q0, p0, mesh: TimeMesh, tol: float = 1e-10,
                      t0: float | None = None, S0: float = 0.0) -> ClassicalTrajectory:
    """Trajectory with ``(q, p, S) = (q0, p0, S0)`` at ``t0`` (default ``mesh.t_start``)."""
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    if q0.shape != (spec.dim,) or p0.shape != (spec.dim,):
        raise ValueError("q0 and p0 must have the potential's dimension")
    t0 = mesh.t_start if t0 is None else float(t0)
    y0 = np.concatenate([q0, p0, [S0]])
    times, states, state_at = _integrate_from(spec, y0, t0, mesh, tol)
    traj = _pack(spec, times, states, q0, p0, state_at, {})
    traj.residuals["energy_drift"] = traj.energy_drift()
    return traj


# --------------------------------------------------------------------------
# incoming asymptote


@dataclass(frozen=True)
class _IncomingBranch:
    """Picard solution on ``(-inf, -T0]`` stored on the graded grid ``s = -T0 e^x``."""

    s: np.ndarray  # increasing times, s[-1] = -T0
    dq: CubicSpline  # q - q_minus - p_minus s, as a function of x
    dp: CubicSpline
    dS: CubicSpline  # S - s |p_minus|^2 / 2
    T0: float
    q_minus: np.ndarray
    p_minus: np.ndarray
    iterations: int
    fixed_point_residual: float

    def state(self, t: float) -> np.ndarray:
        x = math.log(-t / self.T0)
        if x < -1e-12 or x > self.dq.x[-1] + 1e-9:
            raise ValueError(f"time {t} outside the incoming branch")
        x = min(max(x, 0.0), self.dq.x[-1])
        q = self.q_minus + self.p_minus * t + self.dq(x)
        p = self.p_minus + self.dp(x)
        S = 0.5 * t * float(self.p_minus @ self.p_minus) + float(self.dS(x))
        return np.concatenate([q, p, [S]])


def _tail_from_minus_infinity(x: np.ndarray, values: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``int_{-inf}^{s(x)} f ds`` on the grid ``s = -T0 e^x`` (negligible mass beyond x[-1])."""
    # ds = s dx, so the integral from s(X) up to s(x) is int_x^X f |s| dx'
    spline = CubicSpline(x, values * np.abs(s)[:, None], axis=0)
    anti = spline.antiderivative()
    return anti(x[-1]) - anti(x)


def _incoming_branch(spec, q_minus, p_minus, T0, tol, n_nodes=6000, log_span=math.log(1e8),
                     max_iter=200) -> _IncomingBranch:
    x = np.linspace(0.0, log_span, n_nodes)
    s = -T0 * np.exp(x)
    free_q = q_minus[None, :] + s[:, None] * p_minus[None, :]
    dq = np.zeros_like(free_q)
    prev = math.inf
    dist = math.inf
    for it in range(1, max_iter + 1):
        _, grad, _ = eval_potential(spec, free_q + dq)
        dp = -_tail_from_minus_infinity(x, grad, s)
        dq_new = _tail_from_minus_infinity(x, dp, s)
        dist = float(np.max(np.abs(dq_new - dq)))
        dq = dq_new
        if dist <= tol * 1e-2:
            break
        if it > 2 and dist >= prev:
            raise PicardError(f"Picard iteration stopped contracting at T0={T0} "
                              f"(distance {dist:.3e}); increase T0")
        prev = dist
    else:
        raise PicardError(f"Picard iteration did not reach {tol:.1e} within {max_iter} sweeps")
    # final consistency: p from the converged q
    _, grad, _ = eval_potential(spec, free_q + dq)
    dp = -_tail_from_minus_infinity(x, grad, s)
    V = potential_value(spec, free_q + dq)
    pm = p_minus[None, :]
    lag = (pm * dp).sum(axis=1) + 0.5 * (dp**2).sum(axis=1) - V
    dS = _tail_from_minus_infinity(x, lag[:, None], s)[:, 0]
    # CubicSpline needs increasing abscissae; x increases while s decreases
    return _IncomingBranch(
        s=s[::-1],
        dq=CubicSpline(x, dq, axis=0),
        dp=CubicSpline(x, dp, axis=0),
        dS=CubicSpline(x, dS),
        T0=T0,
        q_minus=q_minus,
        p_minus=p_minus,
        iterations=it,
        fixed_point_residual=dist,
    )


def flow_from_minus_infinity(spec: PotentialSpec, q_minus, p_minus, T: float, tol: float = 1e-10,
                             t_end: float | None = None, n_samples: int = 401,
                             T0: float | None = None) -> ClassicalTrajectory:
    """Trajectory with ``q(t) - q_minus - p_minus t -> 0`` and ``p(t) -> p_minus`` at ``-inf``.

    The integral equation ``q = q_minus + p_minus t - int_{-inf}^t (t-s) grad V(q(s)) ds``
    is solved by Picard iteration on ``(-inf, -T0]`` (``T0 = T`` by default),
    starting from free flight, and the solution is continued by the flow up
    to ``t_end`` (default ``T``).  The action is normalized so that
    ``S(t) - t |p_minus|^2 / 2 -> 0`` at ``-inf``.  Samples cover ``[-T, t_end]``.

    ``residuals`` holds the Picard fixed-point distance (required below
    ``10 tol``), the energy drift, and the two asymptotic deviations
    ``|q(-T) - p_minus (-T) - q_minus|`` and ``|p(-T) - p_minus|``; the latter
    are physical quantities that decay like ``T^(1-mu)`` and ``T^(-mu)``.
    """
    q_minus = np.atleast_1d(np.asarray(q_minus, dtype=float))
    p_minus = np.atleast_1d(np.asarray(p_minus, dtype=float))
    if q_minus.shape != (spec.dim,) or p_minus.shape != (spec.dim,):
        raise ValueError("asymptotic data must have the potential's dimension")
    if not np.any(p_minus != 0):
        raise ValueError("incoming momentum p_minus must be nonzero")
    if not T > 0:
        raise ValueError("horizon T must be positive")
    T0 = float(T if T0 is None else T0)
    if T0 > T:
        raise ValueError("Picard region must start at or before -T")
    t_end = float(T if t_end is None else t_end)
    branch = _incoming_branch(spec, q_minus, p_minus, T0, tol)
    y0 = branch.state(-T0)
    sample_times = np.linspace(-T, t_end, n_samples)
    parts_t, parts_y = [], []
    before = sample_times[sample_times < -T0]
    if before.size:
        parts_t.append(before)
        parts_y.append(np.array([branch.state(t) for t in before]))
    after = sample_times[sample_times >= -T0]
    if t_end > -T0:
        mesh = TimeMesh(-T0, t_end, 1.0, tuple(after))
        times, states, dense = _integrate_from(spec, y0, -T0, mesh, tol)
        parts_t.append(times)
        parts_y.append(states)
    else:
        dense = None
    times = np.concatenate(parts_t)
    states = np.concatenate(parts_y)

    def state_at(t):
        if t < -T0:
            return branch.state(t)
        if dense is None:
            raise ValueError(f"time {t} beyond the trajectory end")
        return dense(t)

    yT = state_at(-T)
    d = spec.dim
    residuals = {
        "picard_fixed_point": branch.fixed_point_residual,
        "picard_iterations": branch.iterations,
        "q_asymptote": float(np.linalg.norm(yT[:d] + p_minus * T - q_minus)),
        "p_asymptote": float(np.linalg.norm(yT[d:2 * d] - p_minus)),
    }
    traj = _pack(spec, times, states, q_minus, p_minus, state_at, residuals)
    traj.residuals["energy_drift"] = traj.energy_drift()
    if branch.fixed_point_residual > 10 * tol:
        raise PicardError(f"Picard residual {branch.fixed_point_residual:.3e} above 10*tol")
    return traj


# --------------------------------------------------------------------------
# scattering map


@dataclass(frozen=True)
class ScatteringAsymptote:
    q_minus: np.ndarray
    p_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    S_plus: float
    delta_plus: float
    converged: bool
    residual: float
    horizons: tuple = ()
    delta_history: tuple = ()

    def to_dict(self) -> dict:
        return {
            "q_minus": self.q_minus.tolist(),
            "p_minus": self.p_minus.tolist(),
            "q_plus": self.q_plus.tolist(),
            "p_plus": self.p_plus.tolist(),
            "S_plus": self.S_plus,
            "delta_plus": self.delta_plus,
            "converged": self.converged,
            "residual": self.residual,
        }


DEFAULT_HORIZONS = tuple(25.0 * 2.0**k for k in range(11))


def _outgoing_quantities(traj: ClassicalTrajectory, T: float) -> np.ndarray:
    y = traj.state_at(T)
    d = traj.dim
    q, p, S = y[:d], y[d:2 * d], y[2 * d]
    pp = float(p @ p)
    delta = S - 0.5 * (float(q @ p) - float(traj.q_minus @ traj.p_minus))
    return np.concatenate([p, q - p * T, [S - 0.5 * T * pp, delta]])


def classical_scatter(spec: PotentialSpec, q_minus, p_minus, tol: float = 1e-8,
                      horizons=DEFAULT_HORIZONS, T_in: float = 25.0,
                      return_trajectory: bool = False):
    """Asymptotic outgoing data ``(q+, p+, S+, delta+)`` of the trajectory with data ``(q-, p-)`` at ``-inf``.

    Limits are read along one long trajectory at the doubling horizons and
    Richardson-extrapolated with the known tail exponents (``mu`` for ``p``,
    ``mu - 1`` for the other three).  ``converged`` requires two successive
    extrapolants to agree within ``tol`` and ``p+ != 0``.
    """
    q_minus = np.atleast_1d(np.asarray(q_minus, dtype=float))
    p_minus = np.atleast_1d(np.asarray(p_minus, dtype=float))
    d = spec.dim
    horizons = tuple(float(h) for h in horizons)
    if len(horizons) < 3:
        raise ValueError("need at least three horizons for extrapolation")
    T_max = horizons[-1]
    ode_tol = min(tol, 1e-10)
    traj = flow_from_minus_infinity(spec, q_minus, p_minus, T_in, tol=ode_tol, t_end=T_max,
                                    n_samples=2001)
    # trapping: bounded over the final quarter of the horizon
    tail = traj.times >= 0.75 * T_max
    bound = 2.0 * (np.linalg.norm(q_minus) + np.linalg.norm(p_minus))
    if np.all(np.linalg.norm(traj.q[tail], axis=1) < bound):
        raise NoScattering(f"trajectory from q-={q_minus.tolist()}, p-={p_minus.tolist()} "
                           f"stays within |q| < {bound:.3g} up to t={T_max:g}")
    raw = np.array([_outgoing_quantities(traj, T) for T in horizons])
    if spec.is_zero or math.isinf(spec.mu):
        extrap = raw
    else:
        expo = np.concatenate([np.full(d, spec.mu), np.full(d + 2, spec.mu - 1.0)])
        ratio = np.array([horizons[k + 1] / horizons[k] for k in range(len(horizons) - 1)])
        w = ratio[:, None] ** expo[None, :]
        extrap = (w * raw[1:] - raw[:-1]) / (w - 1.0)
    diffs = np.max(np.abs(np.diff(extrap, axis=0)), axis=1)
    best = extrap[-1]
    residual = float(diffs[-1])
    p_plus = best[:d]
    converged = bool(residual <= tol and np.linalg.norm(p_plus) > 0)
    out = ScatteringAsymptote(
        q_minus=q_minus,
        p_minus=p_minus,
        q_plus=best[d:2 * d],
        p_plus=p_plus,
        S_plus=float(best[2 * d]),
        delta_plus=float(best[2 * d + 1]),
        converged=converged,
        residual=residual,
        horizons=horizons,
        delta_history=tuple(float(v) for v in raw[:, 2 * d + 1]),
    )
    if return_trajectory:
        return out, traj
    return out


def scatter_jacobian(spec: PotentialSpec, q_minus, p_minus, h: float = 1e-3,
                     tol: float = 1e-10, **scatter_kw) -> np.ndarray:
    """``d(q+, p+) / d(q-, p-)`` by central differences of :func:`classical_scatter`."""
    z = np.concatenate([np.atleast_1d(q_minus), np.atleast_1d(p_minus)]).astype(float)
    d = spec.dim
    cols = []
    for k in range(2 * d):
        e = np.zeros(2 * d)
        e[k] = h
        outs = []
        for sgn in (1.0, -1.0):
            zz = z + sgn * e
            res = classical_scatter(spec, zz[:d], zz[d:], tol=tol, **scatter_kw)
            if not res.converged:
                raise RuntimeError(f"neighbour scatter at {zz.tolist()} did not converge "
                                   f"(residual {res.residual:.2e})")
            outs.append(np.concatenate([res.q_plus, res.p_plus]))
        cols.append((outs[0] - outs[1]) / (2 * h))
    return np.column_stack(cols)


def symplectic_form(d: int) -> np.ndarray:
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = np.eye(d)
    J[d:, :d] = -np.eye(d)
    return J


def symplectic_defect(G: np.ndarray) -> float:
    d = G.shape[0] // 2
    J = symplectic_form(d)
    return float(np.max(np.abs(G.T @ J @ G - J)))


# --------------------------------------------------------------------------
# Hessian along the trajectory


@dataclass(frozen=True)
class HessianCurve:
    """``Q(t) = Hess V(q(t))``: samples plus an evaluator on the trajectory window.

    The evaluator applies the analytic Hessian to the trajectory's dense
    interpolant, so ``Q`` inherits the integrator's accuracy rather than that
    of a cubic fit through the samples.
    """

    times: np.ndarray
    values: np.ndarray
    spec: PotentialSpec
    trajectory: ClassicalTrajectory = field(repr=False)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def __call__(self, t: float) -> np.ndarray:
        q, _ = self.trajectory.center(t)
        return eval_potential(self.spec, q)[2]

    def spline(self) -> CubicSpline:
        return CubicSpline(self.times, self.values, axis=0)

    def decay_slope(self, t_lo: float = 10.0, t_hi: float = 100.0, n: int = 40):
        ts = np.geomspace(t_lo, t_hi, n)
        norms = [np.linalg.norm(self(t), 2) for t in ts]
        return fit_power_law(list(zip(ts, norms)))


def hessian_along(spec: PotentialSpec, traj: ClassicalTrajectory) -> HessianCurve:
    _, _, hess = eval_potential(spec, traj.q)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return HessianCurve(traj.times.copy(), hess, spec, traj)


__all__ = [
    "ClassicalTrajectory",
    "HessianCurve",
    "IntegrationError",
    "NoScattering",
    "PicardError",
    "ScatteringAsymptote",
    "classical_scatter",
    "flow_from_initial",
    "flow_from_minus_infinity",
    "hessian_along",
    "scatter_jacobian",
    "symplectic_defect",
    "symplectic_form",
]
