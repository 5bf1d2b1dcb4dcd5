import numpy as np
import pytest
from hypothesis import given, strategies as st

from narf.cauchy_ops import SpectralParam, cauchy_solid, pi_boundary, pi_t
from narf.gauge_field import GaugeField, GridSpec, MatrixField, eval_direction, make_phantom, theta_of
from narf.ray_transport import nonabelian_radon
from narf.spectral_solutions import (
    ConvergenceError,
    DeterminantError,
    SolverConfig,
    anderson,
    boundary_traces,
    build_family,
    factorization_defect,
    load_family,
    save_family,
    solve_c_boundary,
    solve_c_exterior,
    solve_c_infinity,
    verify_lemma_properties,
)


@given(st.integers(0, 10_000), st.integers(0, 4))
def test_anderson_solves_linear_contraction(seed, depth):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((6, 6))
    B *= 0.7 / np.linalg.norm(B, 2)
    c = rng.standard_normal(6)
    x, rep = anderson(lambda x: B @ x + c, np.zeros(6), depth=depth, tol=1e-12, max_iter=500)
    assert rep.converged
    assert np.allclose(x, np.linalg.solve(np.eye(6) - B, c), atol=1e-9)


def test_anderson_accelerates_slow_contraction():
    B = np.diag(np.linspace(0.5, 0.95, 8))
    c = np.ones(8)
    _, plain = anderson(lambda x: B @ x + c, np.zeros(8), depth=0, tol=1e-10, max_iter=1000)
    _, fast = anderson(lambda x: B @ x + c, np.zeros(8), depth=3, tol=1e-10, max_iter=1000)
    assert fast.iterations < plain.iterations / 3


def test_anderson_reports_divergence():
    with pytest.raises(ConvergenceError) as info:
        anderson(lambda x: 2 * x + 1, np.zeros(3), depth=0, max_iter=20)
    assert len(info.value.history) == 20


@pytest.fixture(scope="module")
def grid():
    return GridSpec(64, 1.0)


@pytest.fixture(scope="module")
def scalar_field(grid):
    return make_phantom("smooth_random", grid, m=1, seed=6, amplitude=0.8)


def test_zero_field_gives_identity_everywhere(grid):
    A = GaugeField.zero(grid, 2)
    assert np.allclose(solve_c_infinity(A).values, np.eye(2))
    sol = solve_c_boundary(A, 0.3, 1)
    assert np.allclose(sol.traces(grid.coords)[0], np.eye(2))


def test_c_infinity_scalar_is_exponential_of_solid_transform(scalar_field):
    A = scalar_field
    q = MatrixField(A.grid, 0.5 * A.coupling * (A.a1.values + 1j * A.a2.values))
    ref = np.exp(cauchy_solid(q).values)
    assert np.abs(solve_c_infinity(A).values - ref).max() < 1e-7


@pytest.mark.parametrize("t", [2.0, 0.4 * np.exp(1.0j)])
def test_exterior_solution_scalar_is_exponential(scalar_field, t):
    A = scalar_field
    a = eval_direction(A, SpectralParam(t).zeta)
    ref = np.exp(pi_t(a, t).values)
    c, rep = solve_c_exterior(A, t)
    assert rep.converged
    assert np.abs(c.values - ref).max() < 1e-7 * np.abs(ref).max()


@pytest.mark.parametrize("sign", [1, -1])
def test_boundary_solution_scalar_is_exponential(scalar_field, sign):
    A = scalar_field
    phi = 0.8
    a = eval_direction(A, theta_of(phi))
    ref = np.exp(pi_boundary(a, phi, sign).values)
    got = solve_c_boundary(A, phi, sign).to_grid(A.grid).values
    inner = A.grid.radius() <= 1.5
    # two bicubic resamplings at n = 64 limit the agreement
    assert np.abs(got - ref)[inner].max() < 2e-4 * np.abs(ref).max()


@pytest.fixture(scope="module")
def small_family(grid):
    A = make_phantom("smooth_random", grid, m=2, seed=1, amplitude=1.0)
    return build_family(A, np.linspace(0, 2 * np.pi, 8, endpoint=False))


def test_traces_factor_the_transport(small_family):
    S = nonabelian_radon(small_family.A, offsets=small_family.offsets, angles=small_family.angles)
    for sign in (1, -1):
        assert factorization_defect(small_family, S, sign) < 1e-6


def test_trace_readoff_agrees_with_quadrature(small_family):
    for j in range(small_family.angles.size):
        lo, hi = boundary_traces(small_family, j, 1)
        assert lo.side == "minus_infinity" and hi.side == "plus_infinity"


def test_solutions_stay_invertible(small_family):
    assert small_family.det_min > 0.1
    for reps in small_family.reports.values():
        for r in reps if isinstance(reps, list) else [reps]:
            assert r.converged and r.iterations <= 50


def test_lemma_diagnostics(small_family):
    out = verify_lemma_properties(small_family, analytic_t=2.0, sample_angles=2)
    assert out["transport_residual"] < 1e-3
    assert out["c_inf_residual"] < 5e-3
    assert out["analyticity_residual"] < 1e-4
    assert out["min_det"] > 0


def test_determinant_floor_is_enforced(grid):
    A = make_phantom("smooth_random", grid, m=2, seed=1, amplitude=1.0)
    with pytest.raises(DeterminantError):
        solve_c_infinity(A, SolverConfig(det_floor=1e6))


def test_iteration_budget_is_enforced(grid):
    A = make_phantom("smooth_random", grid, m=2, seed=1, amplitude=1.0)
    with pytest.raises(ConvergenceError):
        solve_c_boundary(A, 0.2, 1, SolverConfig(max_iter=1))


def test_family_save_load_round_trip(small_family, tmp_path):
    save_family(small_family, tmp_path / "fam")
    back = load_family(tmp_path / "fam")
    for key, vals in small_family.traces.items():
        assert np.array_equal(back.traces[key], vals)
    assert np.array_equal(back.c_inf.values, small_family.c_inf.values)
    assert np.allclose(back.angles, small_family.angles)


def test_family_is_deterministic(grid):
    A = make_phantom("smooth_random", grid, m=2, seed=2, amplitude=0.5)
    a = build_family(A, [0.1, 1.7], keep_fields=False)
    b = build_family(A, [0.1, 1.7], keep_fields=False)
    for key in a.traces:
        assert np.array_equal(a.traces[key], b.traces[key])
