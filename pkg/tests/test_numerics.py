import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import beta

from semiscatter.numerics import (
    BoundaryMassWarning,
    ComplexField,
    IntegrationError,
    QuadratureError,
    TimeMesh,
    UniformGrid,
    adaptive_quadrature,
    bootstrap_certificate,
    fit_power_law,
    integrate_ode,
    l2_norm,
    sigma_norm,
    spectral_derivative,
    spectral_l2_norm,
)


def field(grid, fn):
    return ComplexField(grid, np.broadcast_to(fn(*grid.coords), grid.shape).astype(complex), 0.0)


# --- grids ------------------------------------------------------------------


@pytest.mark.parametrize("n", [0, 4, 6, 100])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        UniformGrid(1, 1.0, n)


def test_grid_rejects_bad_width_and_dim():
    with pytest.raises(ValueError):
        UniformGrid(1, 0.0, 16)
    with pytest.raises(ValueError):
        UniformGrid(4, 1.0, 16)


def test_frequencies_are_multiples_of_pi_over_L():
    g = UniformGrid(1, 3.0, 16)
    k = g.frequencies / (math.pi / 3.0)
    assert np.allclose(k, np.round(k), atol=1e-12)
    assert np.allclose(k, np.fft.fftfreq(16, 1.0 / 16))


def test_field_size_must_match_grid():
    g = UniformGrid(2, 1.0, 8)
    with pytest.raises(ValueError):
        ComplexField(g, np.zeros(8, complex), 0.0)


def test_timemesh_validation():
    with pytest.raises(ValueError):
        TimeMesh(1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        TimeMesh(0.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        TimeMesh(0.0, 1.0, 0.1, (0.5, 2.0))


# --- norms ------------------------------------------------------------------


def test_l2_norm_zero_and_constant():
    g = UniformGrid(1, 5.0, 64)
    assert l2_norm(field(g, lambda y: 0 * y)) == 0.0
    assert l2_norm(field(g, lambda y: 1 + 0 * y)) == pytest.approx(math.sqrt(10.0), rel=1e-14)


def test_l2_norm_normalized_gaussian():
    g = UniformGrid(1, 20.0, 512)
    f = field(g, lambda y: np.exp(-y**2 / 2) / math.pi**0.25)
    assert abs(l2_norm(f) - 1.0) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_plancherel(dim, seed):
    n = {1: 64, 2: 16, 3: 8}[dim]
    g = UniformGrid(dim, 2.5, n)
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    f = ComplexField(g, vals, 0.0)
    assert spectral_l2_norm(f) == pytest.approx(l2_norm(f), rel=1e-12)


def test_sigma_norm_zero():
    g = UniformGrid(1, 10.0, 128)
    assert sigma_norm(field(g, lambda y: 0 * y)) == 0.0


def test_sigma_norm_gaussian_closed_form():
    g = UniformGrid(1, 20.0, 512)
    f = field(g, lambda y: np.exp(-y**2 / 2))
    # ||f||^2 = sqrt(pi), ||f'||^2 = sqrt(pi)/2, ||<y> f||^2 = 3 sqrt(pi)/2
    r = math.pi**0.25
    expected = r * (1 + math.sqrt(0.5) + math.sqrt(1.5))
    assert sigma_norm(f) == pytest.approx(expected, rel=1e-10)


def test_sigma_norm_gradient_part_linear_in_k():
    g = UniformGrid(1, 20.0, 1024)
    base = sigma_norm(field(g, lambda y: np.exp(-y**2 / 2)))

    def grad_part(k):
        f = field(g, lambda y: np.exp(1j * k * y - y**2 / 2))
        # ||f|| and ||<y>f|| do not depend on k
        return sigma_norm(f) - base + math.pi**0.25 * math.sqrt(0.5)

    # ||(e^{iky} e^{-y^2/2})'||^2 = sqrt(pi) (k^2 + 1/2)
    for k in (2.0, 5.0, 10.0):
        assert grad_part(k) == pytest.approx(math.pi**0.25 * math.sqrt(k * k + 0.5), rel=1e-10)


def test_sigma_norm_flags_boundary_mass():
    g = UniformGrid(1, 4.0, 128)
    with pytest.warns(BoundaryMassWarning):
        sigma_norm(field(g, lambda y: 1 + 0 * y))


# --- derivatives ------------------------------------------------------------


def test_derivative_of_constant_is_zero():
    g = UniformGrid(2, 3.0, 16)
    d = spectral_derivative(field(g, lambda x, y: 2 + 0 * x), 1)
    assert np.max(np.abs(d.values)) < 1e-14


@pytest.mark.parametrize("m", [1, 3, 7])
def test_derivative_single_mode_exact(m):
    L = 4.0
    g = UniformGrid(1, L, 64)
    f = field(g, lambda y: np.sin(m * math.pi * y / L))
    d = spectral_derivative(f, 0)
    exact = m * math.pi / L * np.cos(m * math.pi * g.axis / L)
    assert np.max(np.abs(d.values - exact)) < 1e-12


def test_derivative_gaussian():
    g = UniformGrid(1, 20.0, 512)
    d = spectral_derivative(field(g, lambda y: np.exp(-y**2 / 2)), 0)
    assert np.max(np.abs(d.values + g.axis * np.exp(-g.axis**2 / 2))) < 1e-8


def test_derivative_axis_out_of_range():
    g = UniformGrid(1, 1.0, 8)
    with pytest.raises(ValueError):
        spectral_derivative(field(g, lambda y: y), 1)


# --- ODE integration --------------------------------------------------------


def test_ode_constant():
    out = integrate_ode(lambda t, y: np.zeros_like(y), [3.0, -1.0], TimeMesh(0, 5, 0.1), 1e-10)
    assert np.all(out.states == np.array([3.0, -1.0]))


def test_ode_exponential():
    tol = 1e-10
    out = integrate_ode(lambda t, y: y, [1.0], TimeMesh(0, 1, 0.1), tol)
    assert abs(out.states[-1, 0] - math.e) < math.e * 10 * tol


def test_ode_harmonic_energy_drift():
    tol = 1e-10
    periods = 1000
    mesh = TimeMesh.uniform(0, 2 * math.pi * periods, 0.1, 2001)
    out = integrate_ode(lambda t, y: np.array([y[1], -y[0]]), [1.0, 0.0], mesh, tol)
    energy = 0.5 * (out.states[:, 0] ** 2 + out.states[:, 1] ** 2)
    assert np.max(np.abs(energy - 0.5)) < 10 * tol


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 5))
def test_ode_backward_forward_roundtrip(a, b, T):
    tol = 1e-10

    def rhs(t, y):
        return np.array([y[1], -np.sin(y[0])])

    mesh = TimeMesh(0.0, T, 0.1)
    fwd = integrate_ode(rhs, [a, b], mesh, tol)
    back = integrate_ode(rhs, fwd.states[-1], mesh, tol, backward=True)
    assert np.max(np.abs(back.states[0] - [a, b])) < 10 * tol * max(1.0, abs(a) + abs(b))


def test_ode_failure_reports_last_time():
    # y' = y^2 from y(0)=1 blows up at t = 1
    with pytest.raises(IntegrationError) as info:
        integrate_ode(lambda t, y: y**2, [1.0], TimeMesh(0, 2, 0.1), 1e-10)
    assert 0.9 < info.value.last_time <= 1.0 + 1e-9


# --- quadrature -------------------------------------------------------------


def test_quadrature_unit():
    assert adaptive_quadrature(lambda s: np.ones_like(s), 0.0, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_quadrature_half_line():
    assert adaptive_quadrature(lambda s: (1 + s) ** -3, 0.0, math.inf, tol=1e-12) == pytest.approx(0.5, abs=1e-12)


def test_quadrature_beta_value():
    mu = 6.0
    val = adaptive_quadrature(lambda s: s**4 * (1 + s) ** (-mu - 1), 0.0, math.inf, tol=1e-13)
    # int_0^inf s^4 (1+s)^(-mu-1) ds = B(5, mu - 4)
    assert val == pytest.approx(beta(5.0, mu - 4.0), abs=1e-12)


def test_quadrature_vector_valued():
    val = adaptive_quadrature(lambda s: np.stack([s, s**2], axis=-1), 0.0, 2.0, tol=1e-13, componentwise=True)
    assert np.allclose(val, [2.0, 8.0 / 3.0], atol=1e-12)


def test_quadrature_nonconvergence_carries_estimate():
    with pytest.raises(QuadratureError) as info:
        adaptive_quadrature(lambda s: np.sin(1 / s) / s, 0.0, 1.0, tol=1e-12, max_intervals=30)
    assert math.isfinite(info.value.estimate)


def test_quadrature_rejects_non_finite_result():
    # bisection lands on the singular point 0.25 exactly
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(QuadratureError):
            adaptive_quadrature(lambda s: np.abs(s - 0.25) ** -0.5, 0.0, 1.0, tol=1e-14, max_intervals=200)


# --- power-law fit ----------------------------------------------------------


def test_fit_sqrt():
    xs = np.geomspace(1e-3, 1, 7)
    fit = fit_power_law(list(zip(xs, xs**0.5)))
    assert abs(fit.slope - 0.5) < 1e-12


def test_fit_quadratic_intercept():
    xs = np.geomspace(0.1, 10, 5)
    fit = fit_power_law(list(zip(xs, 3 * xs**2)))
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_fit_noisy():
    xs = np.geomspace(1e-3, 1, 12)
    fit = fit_power_law(list(zip(xs, xs**0.5 * (1 + 0.01 * np.sin(xs)))))
    assert abs(fit.slope - 0.5) < 0.01


def test_fit_needs_three_points():
    with pytest.raises(ValueError):
        fit_power_law([(1, 1), (2, 2)])
    with pytest.raises(ValueError):
        fit_power_law([(1, 1), (2, -2), (3, 3)])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-5, 5), st.integers(3, 12))
def test_fit_recovers_exact_power_laws(slope, logc, n):
    xs = np.geomspace(0.01, 100, n)
    fit = fit_power_law(list(zip(xs, math.exp(logc) * xs**slope)))
    assert abs(fit.slope - slope) < 1e-10
    assert abs(fit.intercept - logc) < 1e-9


# --- bootstrap predicate ----------------------------------------------------


def test_bootstrap_premise_violation_reported():
    # 0.15 > 0.1 + 0.15^2 = 0.1225: every sample violates the premise
    cert = bootstrap_certificate(0.1, 1.0, 2.0, [0.15] * 4)
    assert cert.status == "premise_violated"
    assert cert.premise_violations == (0, 1, 2, 3)


def test_bootstrap_zero_case():
    assert bootstrap_certificate(0.0, 1.0, 3.0, [0.0] * 5).ok


def test_bootstrap_conclusion_violation():
    # f(0) = 0.1 satisfies the hypothesis; with eps2 tiny, 0.5 satisfies the
    # premise 0.5 <= 0.2 + eps2 * 0.25 only if eps2 >= 1.2, so use eps2 = 1.2.
    # Then the threshold is 1/(2*1.2) = 0.4167 and eps1 = 0.2 = (1-1/2)*0.4.
    cert = bootstrap_certificate(0.2, 1.2, 2.0, [0.1, 0.5])
    assert cert.status == "conclusion_violated"
    assert not cert
    assert cert.conclusion_violations == (1,)


def test_bootstrap_hypotheses_not_met():
    # threshold is 1/(2*eps2) = 0.5; a first sample above it breaks the hypothesis
    cert = bootstrap_certificate(0.1, 1.0, 2.0, [0.6, 0.1])
    assert cert.status == "hypotheses_not_met"
    cert = bootstrap_certificate(0.3, 1.0, 2.0, [0.0])
    assert cert.status == "hypotheses_not_met"


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.05, 2.0), st.floats(1.2, 4.0), st.floats(0.0, 1.0),
       st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_bootstrap_is_consistent_with_its_definition(eps1, eps2, theta, f0, rest):
    cert = bootstrap_certificate(eps1, eps2, theta, [f0] + rest)
    f = np.array([f0] + rest)
    thr = (theta * eps2) ** (-1 / (theta - 1))
    hyp = eps1 < (1 - 1 / theta) * thr and f0 <= thr
    premise = np.all(f <= eps1 + eps2 * f**theta)
    concl = np.all(f <= theta / (theta - 1) * eps1)
    assert cert.ok == bool(hyp and premise and concl)
    if not hyp:
        assert cert.status == "hypotheses_not_met"
