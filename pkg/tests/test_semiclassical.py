import math

import numpy as np
import pytest

from semiscatter.classical import classical_scatter, flow_from_minus_infinity
from semiscatter.numerics import ComplexField, TimeMesh, UniformGrid, fit_power_law, l2_norm
from semiscatter.potential import PotentialSpec
from semiscatter.quadratic import GaussianState
from semiscatter.semiclassical import (
    SemiclassicalProblem,
    critical_exponent,
    error_sup,
    lab_solve,
    lab_to_packet,
    packet_in_frame,
    packet_to_lab,
    quantum_scatter_output,
    reconstruct,
    solve_approx_envelope,
    solve_exact_envelope,
    source_term,
    to_moving_frame,
    veps_field,
)

BUMP = PotentialSpec("gaussian_bump", 0.1, dim=1)
ZERO = PotentialSpec("zero", dim=1)
GY = UniformGrid(1, 32.0, 512)


def diff(a, b):
    return l2_norm(a.with_values(a.values - b.values))


@pytest.fixture(scope="module")
def bump_traj():
    return flow_from_minus_infinity(BUMP, [0.0], [2.0], 10.0, tol=1e-11, t_end=10.0, n_samples=2001)


@pytest.fixture(scope="module")
def free_traj():
    return flow_from_minus_infinity(ZERO, [0.3], [1.0], 10.0, tol=1e-11, t_end=10.0)


def profile(grid=GY, phase=0.0):
    g = GaussianState(math.pi ** -0.25, np.array([[0.3 + 1j]]))
    f = g.sample(grid)
    return f.with_values(f.values * np.exp(1j * phase))


# --- problem ------------------------------------------------------------------


def test_critical_exponent_and_validation(bump_traj):
    assert critical_exponent(3, 1.0) == 2.5 and critical_exponent(1, 1.0) == 1.5
    with pytest.raises(ValueError):
        SemiclassicalProblem(0.1, 1.4, 1.0, BUMP, bump_traj, profile())
    with pytest.raises(ValueError):
        SemiclassicalProblem(1.5, 1.5, 1.0, BUMP, bump_traj, profile())
    with pytest.raises(ValueError):
        SemiclassicalProblem(0.1, 1.5, 1.0, BUMP, bump_traj, profile(UniformGrid(2, 8.0, 16)))
    p = SemiclassicalProblem(0.1, 2.5, 1.0, BUMP, bump_traj, profile())
    assert not p.is_critical and p.approx_coupling == 0.0 and p.exact_coupling == pytest.approx(0.1)


# --- potential in the moving frame ---------------------------------------------


def test_veps_vanishes_without_potential(free_traj):
    V, quad = veps_field(ZERO, free_traj, 0.1, 0.0, GY)
    assert not V.any() and not quad.any()


def test_veps_tends_to_quadratic_at_sqrt_eps(bump_traj):
    near = np.abs(GY.axis) <= 3.0
    rows = []
    for eps in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
        V, quad = veps_field(BUMP, bump_traj, eps, -0.4, GY)
        rows.append((eps, float(np.max(np.abs(V - quad)[near]))))
    assert abs(fit_power_law(rows).slope - 0.5) < 0.1


def test_source_term_zero_and_eps_scaling(free_traj, bump_traj):
    u = ComplexField(GY, profile().values, 0.0)
    S, n2, n32 = source_term(u, free_traj, ZERO, 0.1)
    assert n2 == 0.0 and n32 == 0.0 and not S.values.any()
    u = ComplexField(GY, profile().values, -0.4)
    rows = [(eps, source_term(u, bump_traj, BUMP, eps)[1]) for eps in (0.1, 0.05, 0.025, 0.0125)]
    assert abs(fit_power_law(rows).slope - 0.5) < 0.1


# --- frame changes --------------------------------------------------------------


def test_reconstruct_identity_at_unit_scale():
    f = profile(UniformGrid(1, 16.0, 256))
    out = packet_to_lab(f, [0.0], [0.0], 0.0, 1.0, f.grid)
    assert np.max(np.abs(out.values - f.values)) < 1e-12


def test_reconstruct_isometry_and_round_trip(bump_traj):
    eps = 0.05
    lab = UniformGrid(1, 16.0, 2048)
    u = ComplexField(GY, profile().values, 1.3)
    psi = reconstruct(u, bump_traj, eps, lab)
    assert abs(l2_norm(psi) - l2_norm(u)) < 1e-8
    back = to_moving_frame(psi, bump_traj, eps, GY)
    assert diff(back, u) < 1e-8
    again = reconstruct(back, bump_traj, eps, lab)
    assert diff(again, psi) < 1e-8


def test_clipping_warns():
    with pytest.warns(RuntimeWarning):
        packet_to_lab(profile(), [7.5], [0.0], 0.0, 0.5, UniformGrid(1, 8.0, 256))


def test_packet_in_frame_matches_lab_route():
    eps = 0.25
    f2 = profile(UniformGrid(1, 32.0, 512))
    frame1 = (np.array([0.4]), np.array([1.0]), 0.3)
    frame2 = (np.array([-0.5]), np.array([0.5]), -0.2)
    direct = packet_in_frame(f2, frame1, frame2, eps)
    lab = UniformGrid(1, 16.0, 1024)
    via_lab = lab_to_packet(packet_to_lab(f2, *frame2, eps, lab), *frame1, eps, f2.grid)
    assert diff(direct, via_lab) < 1e-8
    same = packet_in_frame(f2, frame2, frame2, eps)
    assert np.max(np.abs(same.values - f2.values)) < 1e-12


# --- solves ---------------------------------------------------------------------


def test_free_problem_has_no_error(free_traj):
    prob = SemiclassicalProblem(0.05, 1.5, 1.0, ZERO, free_traj, profile(), dt=0.01)
    rep = error_sup(prob, TimeMesh.uniform(-5.0, 5.0, 0.01, 101))
    assert rep.sup <= 1e-10
    assert max(rep.mass_drift.values()) < 1e-12


def test_error_report_structure(bump_traj):
    prob = SemiclassicalProblem(0.05, 1.5, 1.0, BUMP, bump_traj, profile(), dt=0.01)
    short = error_sup(prob, TimeMesh.uniform(-5.0, 0.0, 0.01, 51))
    long = error_sup(prob, TimeMesh.uniform(-5.0, 5.0, 0.01, 101))
    assert short.errors[0] == 0.0 and short.sup == max(short.errors)
    assert long.sup >= short.sup > 0
    assert max(long.mass_drift.values()) < 1e-12
    assert np.allclose(long.errors[:51], short.errors, rtol=1e-12, atol=1e-15)


def test_unit_eps_frame_equivalence(bump_traj):
    # at eps = 1 the laboratory equation and the moving-frame equation are the same dynamics
    dt, T = 0.001, 3.0
    gy = UniformGrid(1, 64.0, 1024)
    prob = SemiclassicalProblem(1.0, 1.5, 1.0, BUMP, bump_traj, profile(gy), dt=dt)
    u_start, u_end = solve_exact_envelope(prob, TimeMesh(-T, T, dt, (-T + 1e-9, T)))
    lab = UniformGrid(1, 64.0, 2048)
    psi0 = reconstruct(u_start, bump_traj, 1.0, lab)
    psi_end = list(lab_solve(psi0, BUMP, 1.0, 1.5, 1.0, [T], dt))[-1]
    assert diff(to_moving_frame(psi_end, bump_traj, 1.0, gy), u_end) < 1e-6


def test_subcritical_run_against_linear_envelope_converges(bump_traj):
    sups = []
    for eps in (0.1, 0.025):
        prob = SemiclassicalProblem(eps, 2.5, 1.0, BUMP, bump_traj, profile(), dt=0.01)
        sups.append(error_sup(prob, TimeMesh.uniform(-5.0, 5.0, 0.01, 51)).sup)
    assert sups[1] < sups[0]


def test_exact_and_approx_solvers_start_together(bump_traj):
    prob = SemiclassicalProblem(0.1, 1.5, 1.0, BUMP, bump_traj, profile(), dt=0.01)
    mesh = TimeMesh.uniform(-5.0, -4.9, 0.01, 2)
    a = list(solve_exact_envelope(prob, mesh))[-1]
    b = list(solve_approx_envelope(prob, mesh))[-1]
    assert a.time_stamp == b.time_stamp == pytest.approx(-4.9)
    assert diff(a, b) < 1e-3


# --- scattering output ----------------------------------------------------------


def test_free_linear_output_is_exact():
    asym, traj = classical_scatter(ZERO, [0.3], [1.0], return_trajectory=True)
    prob = SemiclassicalProblem(0.05, math.inf, 1.0, ZERO, traj, profile(), dt=0.01, asymptote=asym)
    out = quantum_scatter_output(prob, 5.0)
    assert out.difference <= 1e-8


def test_output_phase_covariance():
    asym = classical_scatter(BUMP, [0.0], [2.0])
    traj = flow_from_minus_infinity(BUMP, [0.0], [2.0], 10.0, tol=1e-11, t_end=10.0, n_samples=2001)
    base = SemiclassicalProblem(0.1, 2.0, 2.0, BUMP, traj, profile(), dt=0.01, asymptote=asym)
    turned = SemiclassicalProblem(0.1, 2.0, 2.0, BUMP, traj, profile(phase=0.7), dt=0.01, asymptote=asym)
    a, b = quantum_scatter_output(base, 5.0), quantum_scatter_output(turned, 5.0)
    assert abs(a.difference - b.difference) < 1e-12
    rot = np.exp(0.7j)
    assert np.max(np.abs(b.exact_profile.values - rot * a.exact_profile.values)) < 1e-12
    assert np.max(np.abs(b.predicted_profile.values - rot * a.predicted_profile.values)) < 1e-12


def test_output_requires_asymptote(bump_traj):
    prob = SemiclassicalProblem(0.1, 1.5, 1.0, BUMP, bump_traj, profile())
    with pytest.raises(ValueError):
        quantum_scatter_output(prob, 5.0)
