import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from narf.cauchy_ops import (
    MAX_PAD,
    ConvolutionPlan,
    SpectralParam,
    boundary_apply,
    cauchy_solid,
    cumulative_integral,
    dbar,
    identity_residual,
    identity_suite,
    pi_boundary,
    pi_t,
    riesz,
    riesz_projections,
)
from narf.gauge_field import GridSpec, MatrixField, make_phantom, mollifier, theta_of

# Hilbert transform (1/pi) PV int h(s)/(y - s) ds of h(y) = exp(1 - 1/(1 - y^2)) on |y| < 1,
# from scipy.integrate.quad with weight="cauchy"
HILBERT_MOLLIFIER = {0.3: 0.40188190450000627, 0.8: 0.7653102367235959, 1.5: 0.2774627870984032}
# 2 int_0^rho r b(r) dr for the radial bump b = exp(-r^2 / 0.18) * mollifier, quad to 1e-14
BUMP_MASS = {0.3: 0.06781616627595899, 0.7: 0.1405026881352597, 1.0: 0.14272181619755636}


def test_spectral_param_direction():
    for t in (2.0, 0.5j, 1.3 - 0.2j):
        z = SpectralParam(t).zeta
        assert z[0] ** 2 + z[1] ** 2 == pytest.approx(1.0)
    phi = 0.9
    assert np.allclose(SpectralParam(np.exp(1j * phi)).zeta, theta_of(phi))
    assert SpectralParam(2.0).region == "exterior"
    assert SpectralParam(0.5).region == "interior"
    assert SpectralParam(np.inf).region == "infinity"
    assert SpectralParam(1j, side=1).region == "boundary_plus"
    with pytest.raises(ValueError):
        SpectralParam(0)


def test_hilbert_transform_matches_principal_value_quadrature():
    dy = 0.005
    y = np.arange(-400, 401) * dy
    h = mollifier(np.abs(y), 1.0)
    plus, minus = riesz_projections(h, dy)
    hilbert = (h / 2 - plus) * 2 / 1j
    for y0, ref in HILBERT_MOLLIFIER.items():
        i = int(round(y0 / dy)) + 400
        assert hilbert[i].real == pytest.approx(ref, abs=1e-7)
        assert abs(hilbert[i].imag) < 1e-12


def test_plus_projection_is_boundary_value_in_lower_half_plane():
    # 1/(y^2+1) = (1/2i) [1/(y-i) - 1/(y+i)]; the first term is analytic below the axis.
    # The data are cut at |y| = 20, hence the loose tolerance.
    dy = 0.01
    y = np.arange(-2000, 2001) * dy
    h = 1 / (y**2 + 1)
    p = riesz(h, dy, 1)
    centre = np.abs(y) < 3
    assert np.abs(p - 0.5 / (1 + 1j * y))[centre].max() < 5e-3


@given(arrays(np.complex128, (40, 3), elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False,
                                                                   allow_infinity=False)))
def test_projections_sum_to_identity(h):
    p, m = riesz_projections(h, 0.1)
    assert np.abs(p + m - h).max() <= 1e-12 * max(1.0, np.abs(h).max())


@given(st.integers(0, 10_000), st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_projections_are_linear(seed, a):
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal((2, 64))
    lhs = riesz(a * f + g, 0.05, 1)
    rhs = a * riesz(f, 0.05, 1) + riesz(g, 0.05, 1)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + abs(a)))


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(0.3, 1.0))
def test_projection_of_real_data_is_conjugate_pair(centres, width):
    y = (np.arange(-60, 60) + 0.5) * 0.1
    f = sum(np.exp(-((y - c) / width) ** 2) for c in centres)
    p, m = riesz_projections(f, 0.1)
    assert np.allclose(np.conj(p), m, atol=1e-13)


def test_cumulative_integral_of_gaussian():
    from scipy.special import erf
    dy = 0.02
    y = (np.arange(-300, 300) + 0.5) * dy
    g = np.exp(-(y**2))
    exact = 0.5 * np.sqrt(np.pi) * (erf(y) + 1)
    anti = cumulative_integral(g, dy)
    assert np.abs(anti - (exact - exact[0])).max() < 1e-10


def test_solid_cauchy_transform_of_radial_bump():
    """For radial h, S h(z) = (mass of h inside |w| < |z|) / (pi z)."""
    grid = GridSpec(128, 1.0)
    h = make_phantom("gaussian_bump", grid).a0
    S = cauchy_solid(h).values[..., 0, 0]
    x1, x2 = grid.mesh()
    z = x1 + 1j * x2
    outside = grid.radius() >= 1.0
    assert np.abs(S * z - BUMP_MASS[1.0])[outside].max() < 1e-8
    # inside: compare against the enclosed mass at nodes closest to the tabulated radii
    r = grid.radius()
    for rho, mass in BUMP_MASS.items():
        if rho < 1.0:
            near = np.abs(r - rho) < 0.5 * grid.h
            assert near.any()
            from scipy.integrate import quad
            for k in np.flatnonzero(near.ravel())[:3]:
                rk = r.ravel()[k]
                ref = quad(lambda s: 2 * s * np.exp(-s * s / 0.18) * mollifier(np.array([s]), 1.0)[0],
                           0, rk, epsabs=1e-14)[0]
                assert abs(S.ravel()[k] * z.ravel()[k] - ref) < 1e-7
            assert abs(mass) > 0


def test_dbar_of_solid_transform_is_identity():
    grid = GridSpec(128, 1.0)
    h = make_phantom("gaussian_bump", grid).a0
    assert identity_residual(cauchy_solid(h), h, (0.5, 0.5j)) < 1e-4


@pytest.mark.parametrize("t", [2.0, 0.5, 1.6 * np.exp(0.7j), 0.6 * np.exp(-1.2j)])
def test_pi_t_inverts_directional_derivative(t):
    grid = GridSpec(128, 1.0)
    h = make_phantom("smooth_random", grid, m=1, seed=3).a0
    err = identity_residual(pi_t(h, t), h, SpectralParam(t).zeta)
    assert err < 5e-4


def test_pi_t_at_infinity_approaches_solid_over_t():
    grid = GridSpec(64, 1.0)
    h = make_phantom("gaussian_bump", grid).a0
    t = 1e4
    S = cauchy_solid(h).values
    P = pi_t(h, t).values
    assert np.abs(t * P - S).max() < 1e-3 * np.abs(S).max()


def test_pi_t_rejects_unit_circle():
    grid = GridSpec(32, 1.0)
    h = make_phantom("gaussian_bump", grid).a0
    with pytest.raises(ValueError):
        pi_t(h, np.exp(0.3j))


def test_pi_t_tends_to_boundary_operators_near_circle():
    grid = GridSpec(64, 1.0)
    h = make_phantom("gaussian_bump", grid).a0
    phi = 0.7
    plus = pi_boundary(h, phi, 1).values
    minus = pi_boundary(h, phi, -1).values
    inner = grid.radius() <= 1.5
    gaps = []
    for r in (1.4, 1.2, 1.1, 1.05):
        outside = pi_t(h, r * np.exp(1j * phi), eval_radius=1.5).values
        inside = pi_t(h, np.exp(1j * phi) / r, eval_radius=1.5).values
        gaps.append((np.abs(outside - plus)[inner].max(), np.abs(inside - minus)[inner].max()))
    # the exterior side picks its own limit, not the other one
    assert np.abs(outside - minus)[inner].max() > 4 * gaps[-1][0]
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps, axis=0) < 0)
    # the approach is roughly linear in |t| - 1
    assert gaps[-1].max() < 0.35 * gaps[0].max()


def test_convolution_plan_refuses_huge_padding():
    with pytest.raises(MemoryError):
        ConvolutionPlan(256, 4 / 255, 1.0, t=1.001)
    assert MAX_PAD >= 4096


@pytest.mark.parametrize("sign", [1, -1])
def test_boundary_operator_inverts_transport(sign):
    grid = GridSpec(128, 1.0)
    h = make_phantom("smooth_random", grid, m=1, seed=1).a0
    phi = 1.1
    err = identity_residual(pi_boundary(h, phi, sign), h, theta_of(phi))
    assert err < 5e-4


def test_boundary_operators_differ_by_line_integral_projection():
    """Pi_+ - Pi_- = -(Pi^- - Pi^+) applied to the line total, constant along each line."""
    rng = np.random.default_rng(2)
    dy = 0.05
    y = (np.arange(-40, 40) + 0.5) * dy
    g = np.exp(-4 * (y[:, None] ** 2 + y[None, :] ** 2)) * (1 + 0.3 * rng.standard_normal((1, 80)))
    g = g * np.exp(-4 * y[None, :] ** 2)
    a, tot = boundary_apply(g, dy, 1, totals=True)
    b = boundary_apply(g, dy, -1)
    p, m = riesz_projections(tot, dy)
    assert np.allclose(a - b, (p - m)[:, None], atol=1e-12)


def test_operators_are_linear_in_the_data():
    grid = GridSpec(64, 1.0)
    f = make_phantom("smooth_random", grid, m=1, seed=1).a0
    g = make_phantom("smooth_random", grid, m=1, seed=2).a0
    a = 0.7 - 1.3j
    for op in (cauchy_solid, lambda u: pi_t(u, 2.0), lambda u: pi_boundary(u, 0.4, 1), dbar):
        lhs = op(f * a + g).values
        rhs = a * op(f).values + op(g).values
        assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(rhs).max()


def test_zero_input_gives_zero_output(grid32):
    z = MatrixField.zeros(grid32, 2)
    assert not np.any(cauchy_solid(z).values)
    assert not np.any(pi_boundary(z, 0.3, -1).values)


def test_identity_suite_reports_small_residuals():
    res = identity_suite(64)
    assert res["projection_sum"] < 1e-12
    assert max(v for k, v in res.items() if k != "projection_sum") < 1e-2
