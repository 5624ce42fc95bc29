import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semiscatter.classical import flow_from_minus_infinity, hessian_along
from semiscatter.envelope import EnvelopeProblem, envelope_solve
from semiscatter.numerics import TimeMesh, UniformGrid, l2_norm
from semiscatter.potential import PotentialSpec
from semiscatter.quadratic import (
    GaussianState,
    MatrixCurve,
    RiccatiBlowUp,
    dispersion_rate,
    gaussian_propagate,
    integrate_scaled_riccati,
    riccati_solve,
    vector_field_frame,
)

INV3 = PotentialSpec("inverse_power", 0.1, mu=3.0, width=1.0, dim=3)
QM = np.array([0.0, 0.5, 0.0])
PM = np.array([1.0, 0.0, 0.0])


@pytest.fixture(scope="module")
def Q_incoming():
    tr = flow_from_minus_infinity(INV3, QM, PM, 1e4, tol=1e-10, t_end=-20.0, T0=25.0, n_samples=2001)
    return hessian_along(INV3, tr)


@pytest.fixture(scope="module")
def Q_outgoing():
    tr = flow_from_minus_infinity(INV3, QM, PM, 25.0, tol=1e-10, t_end=2000.0, n_samples=2001)
    return hessian_along(INV3, tr)


# --- scalar Euler-type oracle -------------------------------------------------
# Q = 2/t^2: M = u'/u with u'' + 2u/t^2 = 0, u = s^(1/2) cos(w log s + phi), s = -t


W7 = math.sqrt(7.0) / 2


def euler_M(t, t0=-20.0):
    s, s0 = -t, -t0
    theta0 = math.atan(-1.0 / (2 * W7))  # fixes M(t0) = 1/t0
    theta = theta0 + W7 * math.log(s / s0)
    return -(0.5 - W7 * math.tan(theta)) / s


EULER_Q = MatrixCurve(lambda t: np.array([[2.0 / t**2]]), 1)


def test_euler_oracle_backward_branch():
    ric = riccati_solve(EULER_Q, t0=-20.0, T_end=-60.0, tol=1e-11, n_samples=50)
    exact = np.array([euler_M(t) for t in ric.times])
    assert np.max(np.abs(ric.M1[:, 0, 0] - exact) / np.abs(exact)) < 1e-8


def test_euler_oracle_forward_branch():
    ric = riccati_solve(EULER_Q, t0=-20.0, T_end=-20.0, tol=1e-11, forward_to=-10.0, n_samples=50)
    fwd = ric.times > -20.0
    exact = np.array([euler_M(t) for t in ric.times[fwd]])
    assert np.max(np.abs(ric.M1[fwd, 0, 0] - exact) / np.abs(exact)) < 1e-8


def test_euler_blowup_time():
    theta0 = math.atan(-1.0 / (2 * W7))
    t_blow = -20.0 * math.exp(-(math.pi / 2 + theta0) / W7)
    with pytest.raises(RiccatiBlowUp) as info:
        riccati_solve(EULER_Q, t0=-20.0, T_end=-20.0, tol=1e-10, forward_to=-1.0)
    # |M| = 1e10 is reached within ~1e-10 |t| of the pole
    assert info.value.last_time == pytest.approx(t_blow, abs=1e-6)


# --- Riccati with data at -inf ------------------------------------------------


def test_free_riccati_is_identity_over_t():
    ric = riccati_solve(MatrixCurve.zero(3), t0=-20.0, T_end=-1e4, tol=1e-10)
    assert ric.asymptotic_residual == 0.0
    assert np.allclose(ric.M1 * ric.times[:, None, None], np.eye(3), atol=1e-14)


def test_anchor_and_sign_checks():
    with pytest.raises(ValueError):
        riccati_solve(MatrixCurve.zero(1), t0=-0.5)
    with pytest.raises(ValueError):
        riccati_solve(MatrixCurve.zero(1), t0=-20.0, T_end=-10.0)
    with pytest.raises(ValueError):
        integrate_scaled_riccati(MatrixCurve.zero(1), -1.0, 1.0, 1e-8)


def test_scattering_Q_residual_symmetric_and_stable(Q_incoming):
    a = riccati_solve(Q_incoming, t0=-20.0, T_end=-1e4, tol=1e-10)
    b = riccati_solve(Q_incoming, t0=-20.0, T_end=-1e4, tol=5e-11)
    assert a.symmetry_defect() <= 1e-10
    assert math.isfinite(a.asymptotic_residual) and a.asymptotic_residual > 0
    assert abs(b.asymptotic_residual / a.asymptotic_residual - 1) < 0.05


@pytest.mark.parametrize("dim", [1, 3])
def test_free_dispersion_exponent(dim):
    ric = riccati_solve(MatrixCurve.zero(dim), t0=-20.0, T_end=-1e4, tol=1e-10)
    _, h, fit = dispersion_rate(ric)
    assert fit.slope == pytest.approx(dim / 2, abs=1e-10)
    assert np.all(np.diff(h) < 0)  # |t| decreases along the samples


def test_scattering_dispersion_exponent(Q_incoming):
    ric = riccati_solve(Q_incoming, t0=-20.0, T_end=-1e4, tol=1e-10)
    assert abs(dispersion_rate(ric)[2].slope - 1.5) <= 0.05


# --- Gaussian states ----------------------------------------------------------


def test_gaussian_state_validation():
    with pytest.raises(ValueError):
        GaussianState(1.0, np.array([[1j, 0.5], [0.0, 1j]]))
    with pytest.raises(ValueError):
        GaussianState(1.0, np.array([[-1j]]))


def test_gaussian_norm_matches_grid_quadrature():
    G = np.array([[0.3 + 1.2j, 0.1 + 0.2j], [0.1 + 0.2j, -0.5 + 0.8j]])
    g = GaussianState(0.7 - 0.2j, G)
    grid = UniformGrid(2, 16.0, 128)
    assert l2_norm(g.sample(grid)) == pytest.approx(g.norm(), rel=1e-12)


@pytest.mark.parametrize("dim", [1, 3])
def test_free_gaussian_closed_form(dim):
    g0 = GaussianState.standard(dim)
    mesh = TimeMesh.uniform(0.0, 4.0, 0.1, 9)
    out = gaussian_propagate(g0, MatrixCurve.zero(dim), mesh, tol=1e-12)
    for g in out:
        t = g.time_stamp
        assert np.allclose(g.Gamma, (t + 1j) / (1 + t * t) * np.eye(dim), atol=1e-11)
        assert g.A == pytest.approx(math.pi ** (-dim / 4) * (1 + 1j * t) ** (-dim / 2), abs=1e-11)
        ref = g0.free_evolved(t)
        assert np.allclose(ref.Gamma, g.Gamma, atol=1e-11) and abs(ref.A - g.A) < 1e-11


@settings(max_examples=15, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(-1.0, 1.0), st.floats(0.2, 3.0))
def test_gaussian_norm_conserved_for_any_Q(a, b, c, width):
    tol = 1e-10
    Q = MatrixCurve(lambda t: np.array([[a, c], [c, b]]) * math.exp(-(t / width) ** 2), 2)
    g0 = GaussianState(1.0, np.array([[1j, 0.2], [0.2, 2j]]))
    out = gaussian_propagate(g0, Q, TimeMesh.uniform(-3.0, 3.0, 0.1, 13), tol=tol)
    n0 = g0.norm()
    assert max(abs(g.norm() / n0 - 1) for g in out) < 10 * tol


def test_gaussian_matches_spectral_solver():
    spec = PotentialSpec("gaussian_bump", 0.1, dim=1)
    tr = flow_from_minus_infinity(spec, [0.3], [1.0], 60.0, tol=1e-11, t_end=60.0, n_samples=2001)
    Q = hessian_along(spec, tr)
    grid = UniformGrid(1, 64.0, 1024)
    g0 = GaussianState.standard(1, -5.0)
    mesh = TimeMesh.uniform(-5.0, 0.0, 0.0025, 2)
    g_end = gaussian_propagate(g0, Q, mesh, tol=1e-12)[-1]
    u_end = envelope_solve(g0.sample(grid), EnvelopeProblem(grid, Q=Q, dt=0.0025), mesh).final
    assert l2_norm(u_end.with_values(u_end.values - g_end.sample(grid).values)) < 1e-6


# --- adapted frames -----------------------------------------------------------


@pytest.mark.parametrize("sign", [1, -1])
def test_free_frames(sign):
    fr = vector_field_frame(MatrixCurve.zero(2), sign, 5.0, tol=1e-10)
    t = fr.times[:, None, None]
    assert np.allclose(fr.K * t, np.eye(2), atol=1e-13)
    assert np.allclose(fr.W / t, np.eye(2), atol=1e-13)
    assert fr.riccati_residual < 1e-8 and fr.transport_residual < 1e-8


def test_frame_argument_checks():
    with pytest.raises(ValueError):
        vector_field_frame(MatrixCurve.zero(1), 0, 5.0)
    with pytest.raises(ValueError):
        vector_field_frame(MatrixCurve.zero(1), 1, -5.0)
    with pytest.raises(ValueError):
        vector_field_frame(MatrixCurve.zero(1), 1, 5.0, T_far=4.0)


@pytest.mark.parametrize("sign", [1, -1])
def test_scattering_frames_approach_free_ones(sign, Q_incoming, Q_outgoing):
    Q = Q_outgoing if sign > 0 else Q_incoming
    fr = vector_field_frame(Q, sign, 20.0, tol=1e-10, T_far=2000.0)
    assert fr.riccati_residual < 1e-6 and fr.transport_residual < 1e-6
    outer = np.abs(fr.times) >= np.sqrt(20.0 * 2000.0)
    tk, w = fr.tK_residual()[outer], fr.W_residual()[outer]
    order = np.argsort(np.abs(fr.times[outer]))
    # both residuals shrink as |t| grows
    assert np.all(np.diff(tk[order]) <= 0) and np.all(np.diff(w[order]) <= 0)
    assert tk[order][0] > 0
