"""The exact epsilon-dependent problem in the co-moving frame and its comparison with the envelope.

Laboratory wave packets are written

    packet(x) = eps^(-d/4) f((x - a) / sqrt(eps)) exp(i (theta + b.(x - a)) / eps)

with center ``a``, momentum ``b``, phase ``theta`` and profile ``f`` on a
y-grid.  Along a classical trajectory the ansatz uses ``a = q(t)``,
``b = p(t)`` and ``theta = S(t) + q_minus.p_minus / 2``; the constant gauge
term makes the incoming state match the asymptotic coherent state whose
phase carries ``exp(i q_minus.p_minus / (2 eps))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import conventions
from .classical import ClassicalTrajectory, hessian_along
from .envelope import EnvelopeProblem, evolve, free_propagate, scatter_plus
from .numerics import ComplexField, TimeMesh, UniformGrid, l2_norm, lp_norm
from .potential import PotentialSpec, eval_potential, potential_value


def critical_exponent(dim: int, sigma: float) -> float:
    return 1.0 + dim * sigma / 2.0


@dataclass(frozen=True)
class SemiclassicalProblem:
    """One packet: potential, classical trajectory covering the window, incoming profile.

    ``envelope_lam`` is the nonlinear coupling of the approximate envelope;
    by default 1 at critical coupling and 0 (linear envelope) above it.
    """

    eps: float
    alpha: float
    sigma: float
    spec: PotentialSpec
    trajectory: ClassicalTrajectory
    u_minus: ComplexField
    dt: float = 0.01
    envelope_lam: float | None = None
    asymptote: object | None = None

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if self.alpha < self.alpha_c - 1e-12:
            raise ValueError(f"alpha={self.alpha} below the critical value {self.alpha_c}")
        if self.u_minus.grid.dim != self.spec.dim:
            raise ValueError("profile grid and potential dimension differ")

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def alpha_c(self) -> float:
        return critical_exponent(self.dim, self.sigma)

    @property
    def is_critical(self) -> bool:
        return abs(self.alpha - self.alpha_c) < 1e-12

    @property
    def exact_coupling(self) -> float:
        return self.eps ** (self.alpha - self.alpha_c)

    @property
    def approx_coupling(self) -> float:
        if self.envelope_lam is not None:
            return self.envelope_lam
        return 1.0 if self.is_critical else 0.0

    @property
    def grid(self) -> UniformGrid:
        return self.u_minus.grid

    def gauge(self) -> float:
        return 0.5 * float(self.trajectory.q_minus @ self.trajectory.p_minus)

    def exact_problem(self) -> EnvelopeProblem:
        spec, traj, eps, grid = self.spec, self.trajectory, self.eps, self.grid
        return EnvelopeProblem(grid, self.exact_coupling, self.sigma, None, self.dt,
                               local_potential=lambda t: veps_field(spec, traj, eps, t, grid)[0])

    def approx_problem(self) -> EnvelopeProblem:
        Q = None if self.spec.is_zero else hessian_along(self.spec, self.trajectory)
        return EnvelopeProblem(self.grid, self.approx_coupling, self.sigma, Q, self.dt)


# --------------------------------------------------------------------------
# potential in the moving frame


def _shifted_points(grid: UniformGrid, q: np.ndarray, eps: float):
    s = math.sqrt(eps)
    axes = [q[j] + s * grid.coords[j] for j in range(grid.dim)]
    return np.stack(np.broadcast_arrays(*axes), axis=-1)


def veps_field(spec: PotentialSpec, traj: ClassicalTrajectory, eps: float, t: float,
               grid: UniformGrid):
    """``(V^eps(t, .), <Q(t) y, y>/2)`` on the grid.

    ``V^eps = (V(q + sqrt(eps) y) - V(q) - sqrt(eps) grad V(q).y) / eps`` with
    ``q = q(t)``: the Taylor remainder of ``V`` at the center, rescaled.
    """
    q, _ = traj.center(t)
    V0, g0, H0 = eval_potential(spec, q)
    quad = np.zeros(grid.shape)
    lin = np.zeros(grid.shape)
    for j in range(grid.dim):
        lin = lin + g0[j] * grid.coords[j]
        for k in range(grid.dim):
            if H0[j, k] != 0:
                quad = quad + 0.5 * H0[j, k] * grid.coords[j] * grid.coords[k]
    if spec.is_zero:
        return np.zeros(grid.shape), quad
    pts = _shifted_points(grid, q, eps)
    Vx = potential_value(spec, pts)
    return (Vx - V0 - math.sqrt(eps) * lin) / eps, quad


def source_term(u: ComplexField, traj: ClassicalTrajectory, spec: PotentialSpec, eps: float):
    """``S^eps = (V^eps - <Qy,y>/2) u`` with its L2 norm and rescaled L^{3/2} norm.

    The L2 norm equals ``||L^eps(t)||_{L2(x)} / eps``; the second number is
    ``||L^eps(t)||_{L^{3/2}(x)} / eps = eps^(d/12) ||S^eps||_{L^{3/2}}``.
    """
    Veps, quad = veps_field(spec, traj, eps, u.time_stamp, u.grid)
    S = u.with_values((Veps - quad) * u.values)
    d = u.grid.dim
    return S, l2_norm(S), eps ** (d / 12.0) * lp_norm(S, 1.5)


def cubic_taylor_source(u: ComplexField, traj: ClassicalTrajectory, spec: PotentialSpec,
                        eps: float) -> float:
    """``sqrt(eps)/6 || D^3 V(q)[y,y,y] u ||``: the leading term of the source norm."""
    from .potential import third_derivative

    q, _ = traj.center(u.time_stamp)
    T3 = third_derivative(spec, q)
    ys = u.grid.coords
    d = u.grid.dim
    cubic = np.zeros(u.grid.shape)
    for i in range(d):
        for j in range(d):
            for k in range(d):
                if T3[i, j, k] != 0:
                    cubic = cubic + T3[i, j, k] * ys[i] * ys[j] * ys[k]
    return math.sqrt(eps) / 6.0 * l2_norm(u.with_values(cubic * u.values))


# --------------------------------------------------------------------------
# band-limited interpolation and frame changes


def _interpolate_axis(c: np.ndarray, grid: UniformGrid, points: np.ndarray) -> np.ndarray:
    """Trigonometric interpolant along axis 0 of the Fourier coefficients ``c``, at ``points``.

    Points outside ``[-L, L]`` give zero (the field is taken to vanish
    outside the box rather than repeat periodically).
    """
    n = grid.points_per_axis
    L = grid.half_width
    nyq = n // 2
    out = np.zeros((points.size,) + c.shape[1:], dtype=complex)
    inside = np.flatnonzero((points >= -L) & (points <= L))
    if inside.size == 0:
        return out
    # wavenumber k pi / L: the interpolant is a polynomial in z = exp(i pi (x + L) / L),
    # evaluated by Horner's rule so no (points x n) matrix is formed
    th = np.pi * (points[inside] + L) / L
    z = np.exp(1j * th).reshape((-1,) + (1,) * (c.ndim - 1))
    pos = np.zeros((inside.size,) + c.shape[1:], dtype=complex)
    neg = np.zeros_like(pos)
    for k in range(nyq - 1, 0, -1):
        pos = pos * z + c[k]
        neg = neg * z + c[nyq + k]
    pos = pos * z + c[0]
    neg = neg * z  # negative wavenumbers k - n, k = nyq + 1 .. n - 1
    zn = np.exp(-1j * nyq * th).reshape(z.shape)
    out[inside] = (pos + zn * neg + np.cos(nyq * th).reshape(z.shape) * c[nyq]) / n
    return out


def interpolate_separable(f: ComplexField, axis_points: list[np.ndarray]) -> np.ndarray:
    """Values of the band-limited interpolant of ``f`` on the product of ``axis_points``."""
    out = conventions.forward(f.values)
    for a, pts in enumerate(axis_points):
        moved = _interpolate_axis(np.moveaxis(out, a, 0), f.grid, np.asarray(pts, dtype=float))
        out = np.moveaxis(moved, 0, a)
    return out


def _plane_phase(grid: UniformGrid, center, momentum, theta, eps):
    ph = np.full(grid.shape, theta / eps, dtype=float)
    for j in range(grid.dim):
        ph = ph + momentum[j] * (grid.coords[j] - center[j]) / eps
    return np.exp(1j * ph)


def packet_to_lab(f: ComplexField, center, momentum, theta: float, eps: float,
                  lab_grid: UniformGrid, warn_tol: float = 1e-6) -> ComplexField:
    """Laboratory field of the packet with profile ``f``, sampled on ``lab_grid``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    momentum = np.atleast_1d(np.asarray(momentum, dtype=float))
    s = math.sqrt(eps)
    pts = [(lab_grid.axis - center[j]) / s for j in range(lab_grid.dim)]
    vals = interpolate_separable(f, pts) * eps ** (-lab_grid.dim / 4.0)
    vals = vals * _plane_phase(lab_grid, center, momentum, theta, eps)
    out = ComplexField(lab_grid, vals, f.time_stamp)
    lost = abs(l2_norm(out) - l2_norm(f))
    if lost > warn_tol * max(l2_norm(f), 1e-300):
        warnings.warn(f"laboratory grid clips the packet (norm change {lost:.2e})", RuntimeWarning,
                      stacklevel=2)
    return out


def lab_to_packet(psi: ComplexField, center, momentum, theta: float, eps: float,
                  y_grid: UniformGrid) -> ComplexField:
    """Inverse of :func:`packet_to_lab`: profile on ``y_grid`` seen from the given packet frame.

    The plane-wave factor is removed on the laboratory grid before
    interpolating, so only the slowly varying part is interpolated.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    momentum = np.atleast_1d(np.asarray(momentum, dtype=float))
    demod = psi.with_values(psi.values / _plane_phase(psi.grid, center, momentum, theta, eps))
    s = math.sqrt(eps)
    pts = [center[j] + s * y_grid.axis for j in range(y_grid.dim)]
    vals = interpolate_separable(demod, pts) * eps ** (y_grid.dim / 4.0)
    return ComplexField(y_grid, vals, psi.time_stamp)


def reconstruct(u: ComplexField, traj: ClassicalTrajectory, eps: float, lab_grid: UniformGrid,
                gauge: float | None = None) -> ComplexField:
    """Laboratory field ``eps^(-d/4) u((x-q)/sqrt(eps)) exp(i(S + gauge + p.(x-q))/eps)`` at ``u.time_stamp``.

    ``gauge`` defaults to ``q_minus.p_minus / 2``.
    """
    y = traj.state_at(u.time_stamp)
    d = traj.dim
    g = 0.5 * float(traj.q_minus @ traj.p_minus) if gauge is None else gauge
    return packet_to_lab(u, y[:d], y[d:2 * d], y[2 * d] + g, eps, lab_grid)


def to_moving_frame(psi: ComplexField, traj: ClassicalTrajectory, eps: float, y_grid: UniformGrid,
                    gauge: float | None = None) -> ComplexField:
    y = traj.state_at(psi.time_stamp)
    d = traj.dim
    g = 0.5 * float(traj.q_minus @ traj.p_minus) if gauge is None else gauge
    return lab_to_packet(psi, y[:d], y[d:2 * d], y[2 * d] + g, eps, y_grid)


def packet_in_frame(f2: ComplexField, frame1, frame2, eps: float) -> ComplexField:
    """Profile, in the frame ``(a1, b1, theta1)``, of the packet ``(a2, b2, theta2, f2)``.

    ``f2(y + (a1-a2)/sqrt(eps)) exp(i(theta2 - theta1 + b2.(a1-a2))/eps) exp(i(b2-b1).y/sqrt(eps))``,
    with the shift done by band-limited interpolation on ``f2``'s grid.
    """
    a1, b1, th1 = (np.atleast_1d(np.asarray(frame1[0], float)), np.atleast_1d(np.asarray(frame1[1], float)),
                   float(frame1[2]))
    a2, b2, th2 = (np.atleast_1d(np.asarray(frame2[0], float)), np.atleast_1d(np.asarray(frame2[1], float)),
                   float(frame2[2]))
    s = math.sqrt(eps)
    grid = f2.grid
    shift = (a1 - a2) / s
    pts = [grid.axis + shift[j] for j in range(grid.dim)]
    vals = interpolate_separable(f2, pts)
    ph = np.full(grid.shape, (th2 - th1 + float(b2 @ (a1 - a2))) / eps)
    for j in range(grid.dim):
        ph = ph + (b2[j] - b1[j]) * grid.coords[j] / s
    return ComplexField(grid, vals * np.exp(1j * ph), f2.time_stamp)


# --------------------------------------------------------------------------
# solves and the error functional


def solve_exact_envelope(prob: SemiclassicalProblem, mesh: TimeMesh):
    """Yield ``u^eps`` at the mesh samples, starting from ``free_propagate(u_minus, t_start)``.

    ``mesh.t_start = -T`` is the starting horizon.
    """
    start = free_propagate(ComplexField(prob.grid, prob.u_minus.values, 0.0), mesh.t_start)
    return evolve(start, prob.exact_problem(), [s for s in mesh.sample_times if s > mesh.t_start])


def solve_approx_envelope(prob: SemiclassicalProblem, mesh: TimeMesh):
    start = free_propagate(ComplexField(prob.grid, prob.u_minus.values, 0.0), mesh.t_start)
    return evolve(start, prob.approx_problem(), [s for s in mesh.sample_times if s > mesh.t_start])


@dataclass
class ErrorReport:
    times: np.ndarray
    errors: np.ndarray
    eps: float
    config_hash: str = ""
    initial_phase_defect: float = 0.0  # |delta(-T)| / eps
    mass_drift: dict = field(default_factory=dict)

    @property
    def sup(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else 0.0

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "sup_error": self.sup,
            "config_hash": self.config_hash,
            "initial_phase_defect": self.initial_phase_defect,
            "mass_drift": dict(self.mass_drift),
            "n_samples": int(self.times.size),
        }

    def rows(self):
        return [(float(t), float(e)) for t, e in zip(self.times, self.errors)]


def error_sup(prob: SemiclassicalProblem, mesh: TimeMesh, config_hash: str = "",
              keep_final: bool = False):
    """Per-sample ``||u^eps(t) - u(t)||_{L2}`` over the mesh and its maximum.

    Both solves start from the same state at ``mesh.t_start``, so the first
    sample is exactly zero.  With ``keep_final`` the last exact and
    approximate fields are returned as well.
    """
    start = free_propagate(ComplexField(prob.grid, prob.u_minus.values, 0.0), mesh.t_start)
    m0 = l2_norm(start)
    times, errs = [mesh.t_start], [0.0]
    drift = {"exact": 0.0, "approx": 0.0}
    ue = ua = start
    for ue, ua in zip(solve_exact_envelope(prob, mesh), solve_approx_envelope(prob, mesh)):
        times.append(ue.time_stamp)
        errs.append(l2_norm(ue.with_values(ue.values - ua.values)))
        drift["exact"] = max(drift["exact"], abs(l2_norm(ue) / m0 - 1.0))
        drift["approx"] = max(drift["approx"], abs(l2_norm(ua) / m0 - 1.0))
    traj = prob.trajectory
    y = traj.state_at(mesh.t_start)
    d = traj.dim
    delta0 = y[2 * d] - 0.5 * (float(y[:d] @ y[d:2 * d]) - float(traj.q_minus @ traj.p_minus))
    report = ErrorReport(np.array(times), np.array(errs), prob.eps, config_hash,
                         abs(delta0) / prob.eps, drift)
    if keep_final:
        return report, ue, ua
    return report


@dataclass
class ScatteringOutputComparison:
    difference: float
    exact_profile: ComplexField
    predicted_profile: ComplexField
    exact_frame: tuple
    predicted_frame: tuple
    u_plus_ladder: tuple = ()


def quantum_scatter_output(prob: SemiclassicalProblem, T: float, ladder=None,
                           n_samples: int = 201) -> ScatteringOutputComparison:
    """Far-field output of the exact dynamics against the predicted outgoing coherent state.

    Exact side: ``exp(-i T eps Delta/2) psi^eps(T)``, i.e. the packet with
    profile ``exp(-i T Delta/2) u^eps(T)``, center ``q(T) - T p(T)``,
    momentum ``p(T)`` and phase ``S(T) - T|p(T)|^2/2 + q_minus.p_minus/2``.
    Predicted side: profile ``u_plus`` of the approximate envelope, center
    ``q+``, momentum ``p+`` and phase ``delta+ + q+.p+/2``.  The L2 distance
    is computed in the exact side's y-frame.
    """
    asym = prob.asymptote
    if asym is None:
        raise ValueError("the problem carries no classical scattering asymptote")
    mesh = TimeMesh.uniform(-T, T, prob.dt, n_samples)
    ue = None
    for ue in solve_exact_envelope(prob, mesh):
        pass
    exact_profile = free_propagate(ue, -T)
    traj = prob.trajectory
    y = traj.state_at(T)
    d = traj.dim
    qT, pT, ST = y[:d], y[d:2 * d], y[2 * d]
    frame1 = (qT - T * pT, pT, ST - 0.5 * T * float(pT @ pT) + prob.gauge())
    start = free_propagate(ComplexField(prob.grid, prob.u_minus.values, 0.0), -T)
    ladder = (T,) if ladder is None else tuple(ladder)
    plus = scatter_plus(start, prob.approx_problem(), ladder, raise_on_failure=False)
    frame2 = (asym.q_plus, asym.p_plus, asym.delta_plus + 0.5 * float(asym.q_plus @ asym.p_plus))
    predicted = packet_in_frame(plus.field, frame1, frame2, prob.eps)
    diff = l2_norm(predicted.with_values(predicted.values - exact_profile.values))
    return ScatteringOutputComparison(diff, exact_profile, predicted, frame1, frame2, plus.l2_differences)


# --------------------------------------------------------------------------
# laboratory frame


def lab_problem(spec: PotentialSpec, eps: float, alpha: float, sigma: float, lab_grid: UniformGrid,
                dt: float) -> EnvelopeProblem:
    """``i psi_t + eps Delta psi / 2 = (V/eps) psi + eps^(alpha-1) |psi|^(2 sigma) psi``."""
    pts = lab_grid.points().reshape(lab_grid.shape + (lab_grid.dim,))
    Vx = None if spec.is_zero else potential_value(spec, pts) / eps
    return EnvelopeProblem(lab_grid, eps ** (alpha - 1.0), sigma, None, dt,
                           local_potential=(lambda t: Vx), kinetic=eps)


def lab_solve(psi0: ComplexField, spec: PotentialSpec, eps: float, alpha: float, sigma: float,
              sample_times, dt: float):
    """Yield the laboratory-frame solution at ``sample_times`` (after ``psi0.time_stamp``)."""
    prob = lab_problem(spec, eps, alpha, sigma, psi0.grid, dt)
    return evolve(psi0, prob, [s for s in sample_times if s > psi0.time_stamp])


__all__ = [
    "ErrorReport",
    "ScatteringOutputComparison",
    "SemiclassicalProblem",
    "critical_exponent",
    "cubic_taylor_source",
    "error_sup",
    "interpolate_separable",
    "lab_problem",
    "lab_solve",
    "lab_to_packet",
    "packet_in_frame",
    "packet_to_lab",
    "quantum_scatter_output",
    "reconstruct",
    "solve_approx_envelope",
    "solve_exact_envelope",
    "source_term",
    "to_moving_frame",
    "veps_field",
]
