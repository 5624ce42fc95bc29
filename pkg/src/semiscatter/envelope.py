"""Split-step spectral solver for envelope equations and their diagnostics.

The equation solved is

    i u_t + Delta u / 2 = W(t, y) u + lam |u|^(2 sigma) u

with ``W = <Q(t) y, y> / 2`` by default; a problem may supply any real
local potential instead (the semiclassical module does).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import conventions
from .numerics import (
    BOUNDARY_MASS_THRESHOLD,
    BoundaryMassWarning,
    ComplexField,
    IntegrationError,
    TimeMesh,
    UniformGrid,
    boundary_mass_fraction,
    fit_power_law,
    gradient,
    l2_norm,
    lp_norm,
    sigma_norm,
)


class EnvelopeBlowUp(IntegrationError):
    """Non-finite values appeared; ``last_state`` is the last finite field."""

    def __init__(self, message: str, last_time: float, last_state: ComplexField):
        super().__init__(message, last_time)
        self.last_state = last_state


class NotCauchy(RuntimeError):
    """Scattering-state extraction did not settle along the horizon ladder."""


@dataclass(frozen=True)
class EnvelopeProblem:
    """Data of one envelope equation on a periodic grid.

    ``Q`` is a Q-curve (``t -> (d, d)``) or ``None`` for no quadratic
    potential.  ``local_potential``, when given, replaces the quadratic term
    entirely: it maps ``t`` to a real array on ``grid`` (or ``None`` where it
    vanishes).  ``kinetic`` scales the Laplacian (``kinetic * Delta / 2``);
    ``kinetic = eps`` gives the laboratory-frame semiclassical equation.
    """

    grid: UniformGrid
    lam: float = 0.0
    sigma: float = 1.0
    Q: Callable | None = None
    dt: float = 0.01
    local_potential: Callable[[float], np.ndarray | None] | None = None
    boundary_threshold: float = BOUNDARY_MASS_THRESHOLD
    require_scattering: bool = False
    kinetic: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.lam < 0:
            raise ValueError("only defocusing nonlinearities (lam >= 0) are supported")
        if self.require_scattering and self.lam != 0 and self.sigma < 2.0 / self.dim:
            raise ValueError(f"nonlinear scattering needs sigma >= 2/d, got sigma={self.sigma}, d={self.dim}")

    @property
    def dim(self) -> int:
        return self.grid.dim

    def potential(self, t: float) -> np.ndarray | None:
        if self.local_potential is not None:
            return self.local_potential(t)
        if self.Q is None:
            return None
        return quadratic_form(np.asarray(self.Q(t), dtype=float), self.grid)

    def with_(self, **changes) -> "EnvelopeProblem":
        from dataclasses import replace

        return replace(self, **changes)


def quadratic_form(Qm: np.ndarray, grid: UniformGrid) -> np.ndarray:
    """``<Q y, y> / 2`` on the grid."""
    ys = grid.coords
    out = np.zeros(grid.shape)
    for j in range(grid.dim):
        for k in range(grid.dim):
            if Qm[j, k] != 0:
                out = out + 0.5 * Qm[j, k] * ys[j] * ys[k]
    return out


def free_propagate(f: ComplexField, t: float) -> ComplexField:
    """``exp(i t Delta / 2) f`` via the multiplier ``exp(-i t |xi|^2 / 2)``; time stamp advances by ``t``."""
    if t == 0:
        return f.copy()
    mult = np.exp(-0.5j * t * f.grid.freq_sq)
    return ComplexField(f.grid, conventions.inverse(mult * conventions.forward(f.values)),
                        f.time_stamp + t)


class _Stepper:
    """Strang splitting with cached kinetic multipliers."""

    def __init__(self, prob: EnvelopeProblem):
        self.prob = prob
        self._kinetic: dict[float, np.ndarray] = {}

    def kinetic(self, dt: float) -> np.ndarray:
        m = self._kinetic.get(dt)
        if m is None:
            m = np.exp(-0.5j * dt * self.prob.kinetic * self.prob.grid.freq_sq)
            if len(self._kinetic) > 8:
                self._kinetic.clear()
            self._kinetic[dt] = m
        return m

    def local_phase(self, values: np.ndarray, W: np.ndarray | None, h: float) -> np.ndarray:
        prob = self.prob
        rate = 0.0 if W is None else W
        if prob.lam != 0:
            dens = np.abs(values) ** 2
            rate = rate + prob.lam * (dens if prob.sigma == 1 else dens**prob.sigma)
        if np.isscalar(rate) and rate == 0.0:
            return values
        return values * np.exp(-1j * h * rate)

    def step(self, values: np.ndarray, t: float, dt: float) -> np.ndarray:
        W = self.prob.potential(t + 0.5 * dt)
        v = self.local_phase(values, W, 0.5 * dt)
        v = conventions.inverse(self.kinetic(dt) * conventions.forward(v))
        return self.local_phase(v, W, 0.5 * dt)


def envelope_step(u: ComplexField, t: float, dt: float, prob: EnvelopeProblem) -> ComplexField:
    """One Strang step from ``t`` to ``t + dt`` (potential taken at the midpoint)."""
    return ComplexField(u.grid, _Stepper(prob).step(u.values, t, dt), t + dt)


def evolve(u_init: ComplexField, prob: EnvelopeProblem, sample_times: Sequence[float]) -> Iterator[ComplexField]:
    """Yield the solution at each sample time (starting from ``u_init.time_stamp``).

    Between consecutive samples the step is the largest ``<= prob.dt`` that
    divides the gap evenly, so samples are hit exactly.
    """
    stepper = _Stepper(prob)
    t = float(u_init.time_stamp)
    values = u_init.values.astype(complex, copy=True)
    for s in sample_times:
        s = float(s)
        if s < t - 1e-12:
            raise ValueError("sample times must not precede the initial time")
        gap = s - t
        n = max(1, math.ceil(gap / prob.dt - 1e-9)) if gap > 1e-14 else 0
        h = gap / n if n else 0.0
        for k in range(n):
            new = stepper.step(values, t + k * h, h)
            if not np.all(np.isfinite(new)):
                raise EnvelopeBlowUp("non-finite values in envelope solve", t + k * h,
                                     ComplexField(prob.grid, values, t + k * h))
            values = new
        t = s
        yield ComplexField(prob.grid, values.copy(), t)


# --------------------------------------------------------------------------
# diagnostics


def j_field(u: ComplexField) -> list[np.ndarray]:
    """Components of ``J(t) u = (y + i t grad) u`` at ``t = u.time_stamp``."""
    t = u.time_stamp
    grads = gradient(u)
    return [y * u.values + 1j * t * g for y, g in zip(u.grid.coords, grads)]


def j_norm(u: ComplexField) -> float:
    vol = u.grid.cell_volume
    return math.sqrt(vol * sum(float(np.sum(np.abs(c) ** 2)) for c in j_field(u)))


def momentum_norm(u: ComplexField, ell: int) -> float:
    """``|| |y|^ell u ||``."""
    r = np.sqrt(u.grid.radius_sq)
    return float(math.sqrt(u.grid.cell_volume * np.sum((r**ell * np.abs(u.values)) ** 2)))


def pseudoconformal_energy(u: ComplexField, lam: float, sigma: float) -> float:
    """``||J u||^2 / 2 + lam t^2 / (sigma+1) ||u||_{2 sigma + 2}^{2 sigma + 2}``."""
    t = u.time_stamp
    p = 2 * sigma + 2
    pot = lp_norm(u, p) ** p if lam else 0.0
    return 0.5 * j_norm(u) ** 2 + lam * t**2 / (sigma + 1) * pot


def pseudoconformal_rhs(u: ComplexField, lam: float, sigma: float, Qm: np.ndarray | None) -> float:
    """Time derivative of :func:`pseudoconformal_energy` predicted by the evolution law.

    ``lam t (2 - d sigma)/(sigma+1) ||u||_{2 sigma+2}^{2 sigma+2}
    + t Re <Q J u, J u> + t^2 Im <Q grad u, J u>`` (inner products linear
    in the first slot).
    """
    t = u.time_stamp
    d = u.grid.dim
    vol = u.grid.cell_volume
    p = 2 * sigma + 2
    out = lam * t * (2 - d * sigma) / (sigma + 1) * lp_norm(u, p) ** p if lam else 0.0
    if Qm is not None and np.any(Qm != 0):
        J = j_field(u)
        G = gradient(u)
        QJ = [sum(Qm[j, k] * J[k] for k in range(d)) for j in range(d)]
        QG = [sum(Qm[j, k] * G[k] for k in range(d)) for j in range(d)]
        out += t * vol * float(np.real(sum(np.sum(QJ[j] * np.conj(J[j])) for j in range(d))))
        out += t**2 * vol * float(np.imag(sum(np.sum(QG[j] * np.conj(J[j])) for j in range(d))))
    return out


@dataclass
class EnvelopeDiagnostics:
    times: np.ndarray
    mass: np.ndarray
    j_norm: np.ndarray
    momenta: dict[int, np.ndarray]
    energy: np.ndarray
    energy_rhs: np.ndarray
    boundary_mass: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass / self.mass[0] - 1.0)))

    def law_residual(self) -> np.ndarray:
        return law_residual_samples(self)

    def as_columns(self) -> dict[str, np.ndarray]:
        cols = {"t": self.times, "mass": self.mass, "Jnorm": self.j_norm}
        for ell, v in sorted(self.momenta.items()):
            cols[f"moment_{ell}"] = v
        cols["energy"] = self.energy
        cols["law_residual"] = self.law_residual()
        return cols


def law_residual_samples(diag: EnvelopeDiagnostics) -> np.ndarray:
    """``|dE/dt - RHS| / max_t |E|`` per sample, with centered differences inside and one-sided at the ends.

    Scaling by the size of the functional keeps the column meaningful when the
    right-hand side vanishes identically.
    """
    t, E, rhs = diag.times, diag.energy, diag.energy_rhs
    if t.size < 3:
        return np.zeros_like(t)
    dE = np.gradient(E, t)
    scale = max(float(np.max(np.abs(E))), 1e-300)
    return np.abs(dE - rhs) / scale


def integrated_law_residual(diag: EnvelopeDiagnostics) -> np.ndarray:
    """``E(t) - E(t0) - int_{t0}^t RHS`` (trapezoid over the samples)."""
    from scipy.integrate import cumulative_trapezoid

    integral = cumulative_trapezoid(diag.energy_rhs, diag.times, initial=0.0)
    return diag.energy - diag.energy[0] - integral


@dataclass
class EnvelopeTrajectory:
    times: np.ndarray
    fields: list[ComplexField]
    diagnostics: EnvelopeDiagnostics
    final: ComplexField


def _diagnose(u: ComplexField, prob: EnvelopeProblem, moments: Sequence[int], with_law: bool):
    Qm = None
    if prob.Q is not None and prob.local_potential is None:
        Qm = np.asarray(prob.Q(u.time_stamp), dtype=float)
    row = {
        "mass": l2_norm(u),
        "jnorm": j_norm(u),
        "moments": [momentum_norm(u, ell) for ell in moments],
        "boundary": boundary_mass_fraction(u),
    }
    if with_law:
        row["energy"] = pseudoconformal_energy(u, prob.lam, prob.sigma)
        row["rhs"] = pseudoconformal_rhs(u, prob.lam, prob.sigma, Qm)
    else:
        row["energy"] = row["rhs"] = math.nan
    return row


def envelope_solve(u_init: ComplexField, prob: EnvelopeProblem, mesh: TimeMesh,
                   keep_fields: bool = True, moments: Sequence[int] = (1, 2, 3),
                   diagnostics: bool = True) -> EnvelopeTrajectory:
    """Solve from ``mesh.t_start`` (``u_init`` is re-stamped there) to ``mesh.t_end``.

    Diagnostics are taken at every sample time; the pseudo-conformal
    functional and its predicted derivative only when there is no custom
    local potential (the law is specific to quadratic potentials).
    """
    u0 = ComplexField(u_init.grid, u_init.values, mesh.t_start)
    samples = [s for s in mesh.sample_times if s > mesh.t_start + 1e-14]
    with_law = diagnostics and prob.local_potential is None
    rows, times, fields = [], [], []
    notes: list[str] = []
    last = u0

    def record(u):
        if diagnostics:
            row = _diagnose(u, prob, moments, with_law)
            if row["boundary"] > prob.boundary_threshold and not notes:
                msg = (f"boundary mass fraction {row['boundary']:.2e} above "
                       f"{prob.boundary_threshold:.0e} at t={u.time_stamp:.4g}")
                notes.append(msg)
                warnings.warn(msg, BoundaryMassWarning, stacklevel=3)
            rows.append(row)
        times.append(u.time_stamp)
        if keep_fields:
            fields.append(u)

    if mesh.sample_times[0] <= mesh.t_start + 1e-14:
        record(u0)
    for u in evolve(u0, prob, samples):
        record(u)
        last = u
    if mesh.t_end > last.time_stamp + 1e-14:
        for u in evolve(last, prob, [mesh.t_end]):
            last = u
    diag = EnvelopeDiagnostics(
        times=np.array(times),
        mass=np.array([r["mass"] for r in rows]) if rows else np.array([]),
        j_norm=np.array([r["jnorm"] for r in rows]) if rows else np.array([]),
        momenta={ell: np.array([r["moments"][i] for r in rows]) for i, ell in enumerate(moments)},
        energy=np.array([r["energy"] for r in rows]) if rows else np.array([]),
        energy_rhs=np.array([r["rhs"] for r in rows]) if rows else np.array([]),
        boundary_mass=np.array([r["boundary"] for r in rows]) if rows else np.array([]),
        warnings=notes,
    )
    return EnvelopeTrajectory(np.array(times), fields, diag, last)


def pseudoconformal_residual(traj: EnvelopeTrajectory, prob: EnvelopeProblem | None = None) -> np.ndarray:
    """Per-sample relative residual of the pseudo-conformal evolution law."""
    return law_residual_samples(traj.diagnostics)


def growth_exponent(times, values, t_min: float = 1.0):
    """Power-law fit of ``values`` against ``t`` over ``t >= t_min``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = t >= t_min
    return fit_power_law(list(zip(t[keep], v[keep])))


# --------------------------------------------------------------------------
# scattering states


@dataclass
class ScatteringState:
    """Result of a horizon ladder: the best field plus the Cauchy differences."""

    field: ComplexField
    horizons: tuple[float, ...]
    l2_differences: tuple[float, ...]
    sigma_differences: tuple[float, ...] = ()
    certified: bool = False
    trajectory: EnvelopeTrajectory | None = None


DEFAULT_LADDER = (5.0, 10.0, 20.0, 40.0)


def scatter_minus(u_minus: ComplexField, prob: EnvelopeProblem, T=DEFAULT_LADDER,
                  t_end: float = 0.0, tol: float = 1e-4, raise_on_failure: bool = True,
                  n_samples: int = 201) -> ScatteringState:
    """Envelope with prescribed scattering state ``u_minus`` at ``-inf``.

    For each horizon ``T_k`` the solve starts from ``free_propagate(u_minus, -T_k)``
    at ``-T_k`` and runs to ``t_end``.  The ladder is accepted when the last
    two endpoint fields differ by less than ``tol`` in L2.  The returned
    trajectory is the one from the largest horizon.
    """
    ladder = (float(T),) if np.isscalar(T) else tuple(float(x) for x in T)
    ends, diffs, traj = [], [], None
    for Tk in ladder:
        if not -Tk < t_end:
            raise ValueError("t_end must lie after every starting time -T")
        start = free_propagate(ComplexField(u_minus.grid, u_minus.values, 0.0), -Tk)
        mesh = TimeMesh.uniform(-Tk, t_end, prob.dt, n_samples)
        traj = envelope_solve(start, prob, mesh, keep_fields=False)
        ends.append(traj.final)
        if len(ends) > 1:
            diffs.append(l2_norm(ends[-1].with_values(ends[-1].values - ends[-2].values)))
    certified = len(ladder) == 1 or diffs[-1] < tol
    if not certified and raise_on_failure:
        raise NotCauchy(f"u(t_end; T) not settled: last ladder difference {diffs[-1]:.3e} >= {tol:.1e}; "
                        "increase T or reduce the data")
    return ScatteringState(ends[-1], ladder, tuple(diffs), (), certified, traj)


def scatter_plus(u_start: ComplexField, prob: EnvelopeProblem, T=DEFAULT_LADDER, tol: float = 1e-4,
                 raise_on_failure: bool = True, n_samples: int = 201) -> ScatteringState:
    """Outgoing scattering state ``u_plus = lim exp(-i T Delta/2) u(T)``.

    Solves once from ``u_start`` (at its time stamp) to the largest horizon
    and reads ``free_propagate(u(T_k), -T_k)`` at each ladder horizon.
    Certification requires the last two to agree within ``tol`` in both L2
    and the Sigma norm.
    """
    ladder = (float(T),) if np.isscalar(T) else tuple(float(x) for x in T)
    t0 = u_start.time_stamp
    if not t0 < ladder[0]:
        raise ValueError("horizons must lie after the starting time")
    samples = sorted(set(np.linspace(t0, ladder[-1], n_samples).tolist()) | set(ladder))
    mesh = TimeMesh(t0, ladder[-1], prob.dt, tuple(samples))
    traj = envelope_solve(u_start, prob, mesh, keep_fields=True)
    by_time = {round(f.time_stamp, 12): f for f in traj.fields}
    outs = [free_propagate(by_time[round(Tk, 12)], -Tk) for Tk in ladder]
    l2d, sgd = [], []
    for a, b in zip(outs, outs[1:]):
        diff = b.with_values(b.values - a.values)
        l2d.append(l2_norm(diff))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryMassWarning)
            sgd.append(sigma_norm(diff))
    certified = len(ladder) == 1 or (l2d[-1] < tol and sgd[-1] < tol)
    if not certified and raise_on_failure:
        raise NotCauchy(f"u_plus not settled: L2 {l2d[-1]:.3e}, Sigma {sgd[-1]:.3e} (tol {tol:.1e})")
    u_plus = ComplexField(outs[-1].grid, outs[-1].values, 0.0)
    return ScatteringState(u_plus, ladder, tuple(l2d), tuple(sgd), certified, traj)


__all__ = [
    "EnvelopeBlowUp",
    "EnvelopeDiagnostics",
    "EnvelopeProblem",
    "EnvelopeTrajectory",
    "NotCauchy",
    "ScatteringState",
    "envelope_solve",
    "envelope_step",
    "evolve",
    "free_propagate",
    "growth_exponent",
    "integrated_law_residual",
    "j_norm",
    "momentum_norm",
    "pseudoconformal_energy",
    "pseudoconformal_residual",
    "pseudoconformal_rhs",
    "quadratic_form",
    "scatter_minus",
    "scatter_plus",
]
