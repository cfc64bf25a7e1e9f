import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentfield import (
    CapacityError,
    DegenerateSampleError,
    DomainError,
    InitialLaw,
    SpectralOperator,
    TimeGrid,
    TimePolynomial,
    ValidationError,
    diagonal_profile,
    initial_noise_correlation,
    isometry_check,
    isometry_checks,
    make_dirichlet_laplacian,
    mc_covariance,
    mc_mean,
    mc_second_moment,
    pathwise_weak_residual,
    semigroup_apply,
    simulate_paths,
    solve_second_moment,
    validate_covariance,
)
from momentfield.moment import exchange_symmetric, equal_time_psd


def zero_noise(op):
    return validate_covariance(np.zeros((op.K, op.K)), op)


def test_noiseless_paths_follow_semigroup():
    op = make_dirichlet_laplacian(3)
    x0 = np.array([1.0, -0.5, 0.25])
    grid = TimeGrid(0.5, 10)
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, x0), grid, 5, 1)
    for i, t in enumerate(grid.nodes):
        expected = semigroup_apply(op, t, x0)
        for j in range(5):
            np.testing.assert_array_equal(e.paths[j, :, i], expected)


def test_one_step_variance_scalar():
    op = SpectralOperator([1.0])
    cov = validate_covariance([[1.0]], op)
    M = 10**6
    e = simulate_paths(op, cov, InitialLaw.deterministic(op, [0.0]), TimeGrid(1.0, 1), M, 2)
    x = e.paths[:, 0, 1]
    v = np.mean(x * x)
    se = np.std(x * x, ddof=1) / math.sqrt(M)
    assert abs(v - (1 - math.exp(-2)) / 2) <= 4 * se


@pytest.mark.parametrize("dt", [0.01, 0.3, 2.0])
def test_exact_in_law_any_step(dt):
    alpha, gamma = 3.0, 0.7
    op = SpectralOperator([alpha])
    cov = validate_covariance([[gamma]], op)
    M = 200_000
    e = simulate_paths(op, cov, InitialLaw.deterministic(op, [0.0]), TimeGrid(dt, 1), M, 9)
    x2 = e.paths[:, 0, 1] ** 2
    target = -math.expm1(-2 * alpha * dt) / (2 * alpha) * gamma
    assert abs(x2.mean() - target) <= 4 * np.std(x2, ddof=1) / math.sqrt(M)


def test_thread_count_does_not_change_ensemble():
    op = make_dirichlet_laplacian(3)
    cov = validate_covariance([[1.0, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]], op)
    init = InitialLaw.gaussian(op, [0.1, 0.0, 0.0], np.diag([0.1, 0.2, 0.3]))
    grid = TimeGrid(1.0, 8)
    a = simulate_paths(op, cov, init, grid, 5000, 42, threads=1, record_increments=True)
    b = simulate_paths(op, cov, init, grid, 5000, 42, threads=4, record_increments=True)
    np.testing.assert_array_equal(a.paths, b.paths)
    np.testing.assert_array_equal(a.increments, b.increments)
    np.testing.assert_array_equal(mc_second_moment(a).value, mc_second_moment(b).value)
    np.testing.assert_array_equal(mc_second_moment(a).std_error, mc_second_moment(b).std_error)


def test_sample_stream_independent_of_ensemble_size():
    op = make_dirichlet_laplacian(2)
    cov = diagonal_profile(op, 1.0, 2.0)
    init = InitialLaw.deterministic(op, [0.0, 0.0])
    grid = TimeGrid(1.0, 4)
    small = simulate_paths(op, cov, init, grid, 10, 5)
    large = simulate_paths(op, cov, init, grid, 3000, 5)
    np.testing.assert_array_equal(small.paths, large.paths[:10])


def test_seed_changes_ensemble():
    op = make_dirichlet_laplacian(1)
    cov = diagonal_profile(op, 1.0, 2.0)
    init = InitialLaw.deterministic(op, [0.0])
    grid = TimeGrid(1.0, 2)
    a = simulate_paths(op, cov, init, grid, 10, 1)
    b = simulate_paths(op, cov, init, grid, 10, 2)
    assert not np.array_equal(a.paths, b.paths)


def test_capacity_cap(monkeypatch):
    monkeypatch.setenv("MOMENTFIELD_MAX_CELLS", "100")
    op = make_dirichlet_laplacian(2)
    with pytest.raises(CapacityError):
        simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [0, 0]), TimeGrid(1, 4),
                       100, 0)


def test_invalid_sample_count():
    op = make_dirichlet_laplacian(1)
    with pytest.raises(ValidationError):
        simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [0]), TimeGrid(1, 4), 0, 0)


def test_initial_law_validation():
    op = make_dirichlet_laplacian(2)
    with pytest.raises(ValidationError):
        InitialLaw.gaussian(op, [0, 0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValidationError):
        InitialLaw.deterministic(op, [0, 0, 0])


def test_mean_of_deterministic_paths():
    op = make_dirichlet_laplacian(2)
    x0 = [1.0, 2.0]
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, x0), TimeGrid(1, 4), 50, 0)
    m = mc_mean(e)
    np.testing.assert_array_equal(m.value, e.paths[0])
    assert not np.any(m.std_error)


def test_mean_zero_start():
    op = make_dirichlet_laplacian(2)
    cov = diagonal_profile(op, 1.0, 2.0)
    e = simulate_paths(op, cov, InitialLaw.deterministic(op, [0, 0]), TimeGrid(1, 8), 100_000, 3)
    m = mc_mean(e)
    assert np.all(np.abs(m.value[:, 1:]) <= 4 * m.std_error[:, 1:])


def test_mean_gaussian_start():
    op = make_dirichlet_laplacian(2)
    cov = diagonal_profile(op, 1.0, 2.0)
    mean = np.array([1.0, -1.0])
    init = InitialLaw.gaussian(op, mean, np.diag([0.2, 0.1]))
    grid = TimeGrid(0.2, 8)
    m = mc_mean(simulate_paths(op, cov, init, grid, 100_000, 4))
    target = op.decay(grid.nodes) * mean[:, None]
    assert np.all(np.abs(m.value - target) <= 4 * m.std_error)


def test_second_moment_deterministic():
    op = make_dirichlet_laplacian(2)
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [1.0, 0.5]),
                       TimeGrid(1, 4), 20, 0)
    f = mc_second_moment(e)
    path = e.paths[0]
    np.testing.assert_allclose(f.value, np.einsum("ki,lj->klij", path, path), rtol=1e-15)
    assert not np.any(f.std_error)


def test_covariance_deterministic_is_zero():
    op = make_dirichlet_laplacian(2)
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [1.0, 0.5]),
                       TimeGrid(1, 4), 20, 0)
    assert np.max(np.abs(mc_covariance(e).value)) <= 1e-15


def test_covariance_needs_two_samples():
    op = make_dirichlet_laplacian(1)
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [1.0]), TimeGrid(1, 2), 1, 0)
    with pytest.raises(DegenerateSampleError):
        mc_covariance(e)


def test_covariance_invariant_under_mean_shift():
    op = make_dirichlet_laplacian(2)
    cov = validate_covariance([[1.0, 0.3], [0.3, 0.5]], op)
    grid = TimeGrid(0.5, 8)
    c0 = np.diag([0.2, 0.1])
    a = mc_covariance(simulate_paths(op, cov, InitialLaw.gaussian(op, [0, 0], c0), grid, 20_000, 8))
    b = mc_covariance(simulate_paths(op, cov, InitialLaw.gaussian(op, [3, -2], c0), grid, 20_000, 8))
    assert np.all(np.abs(a.value - b.value) <= 4 * a.std_error + 1e-12)
    np.testing.assert_allclose(a.value, b.value, atol=1e-12)


def test_covariance_equals_second_moment_for_zero_mean():
    op = make_dirichlet_laplacian(2)
    cov = diagonal_profile(op, 1.0, 2.0)
    grid = TimeGrid(0.5, 8)
    e = simulate_paths(op, cov, InitialLaw.gaussian(op, [0, 0], np.diag([0.1, 0.1])), grid,
                       50_000, 12)
    s, c = mc_second_moment(e), mc_covariance(e)
    assert np.all(np.abs(s.value - c.value) <= 4 * s.std_error)


def test_second_moment_against_solver_scalar():
    op = SpectralOperator([1.0])
    cov = validate_covariance([[1.0]], op)
    grid = TimeGrid(1.0, 2)
    init = InitialLaw.deterministic(op, [0.0])
    f = mc_second_moment(simulate_paths(op, cov, init, grid, 200_000, 13))
    u = solve_second_moment(op, cov, init.second_moment(), grid)
    assert abs(f.value[0, 0, 2, 1] - u.values[0, 0, 2, 1]) <= 4 * f.std_error[0, 0, 2, 1]


def test_second_moment_symmetry_and_psd():
    op = make_dirichlet_laplacian(3)
    cov = validate_covariance([[1.0, 0.3, 0.1], [0.3, 0.5, 0.0], [0.1, 0.0, 0.2]], op)
    init = InitialLaw.gaussian(op, [0.5, 0, 0], np.diag([0.1, 0.2, 0.05]))
    f = mc_second_moment(simulate_paths(op, cov, init, TimeGrid(1.0, 6), 3000, 21))
    assert exchange_symmetric(f.value) and exchange_symmetric(f.std_error)
    assert equal_time_psd(f.value)


def test_sliced_estimates_match_full_field():
    op = make_dirichlet_laplacian(2)
    cov = diagonal_profile(op, 1.0, 2.0)
    init = InitialLaw.gaussian(op, [0.5, 0.0], np.diag([0.1, 0.2]))
    e = simulate_paths(op, cov, init, TimeGrid(1.0, 6), 3000, 21)
    full = mc_second_moment(e)
    pairs = [(0, 0), (3, 5), (6, 6)]
    part = mc_second_moment(e, time_pairs=pairs)
    assert part.value.shape == (2, 2, 3) and part.time_pairs == tuple(pairs)
    for p, (i, j) in enumerate(pairs):
        np.testing.assert_allclose(part.value[:, :, p], full.value[:, :, i, j], rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(part.std_error[:, :, p], full.std_error[:, :, i, j], rtol=1e-10,
                                   atol=1e-15)


def test_standard_error_scaling():
    op = make_dirichlet_laplacian(2)
    cov = diagonal_profile(op, 1.0, 2.0)
    init = InitialLaw.gaussian(op, [0.2, 0.0], np.diag([0.1, 0.1]))
    grid = TimeGrid(0.5, 4)
    small = mc_second_moment(simulate_paths(op, cov, init, grid, 20_000, 1)).std_error
    large = mc_second_moment(simulate_paths(op, cov, init, grid, 80_000, 2)).std_error
    ratio = small[small > 0] / large[small > 0]
    assert np.all(np.abs(ratio / 2 - 1) <= 0.2)


def _weak_residual(N, cov, init, op, M=1, seed=0):
    e = simulate_paths(op, cov, init, TimeGrid(1.0, N), M, seed, record_increments=True)
    return pathwise_weak_residual(e, op, (TimePolynomial.vanishing_at(1.0), 0))


def test_weak_residual_noiseless_second_order():
    op = SpectralOperator([2.0])
    init = InitialLaw.deterministic(op, [1.0])
    r = [_weak_residual(N, zero_noise(op), init, op).max_abs for N in (16, 32, 64)]
    orders = np.log2(np.array(r[:-1]) / np.array(r[1:]))
    assert np.all(np.abs(orders - 2) < 0.1)


def test_weak_residual_zero_test_function():
    op = SpectralOperator([2.0])
    cov = validate_covariance([[1.0]], op)
    e = simulate_paths(op, cov, InitialLaw.deterministic(op, [1.0]), TimeGrid(1, 8), 10, 0,
                       record_increments=True)
    assert pathwise_weak_residual(e, op, (TimePolynomial((0.0,)), 0)).max_abs == 0.0


def test_weak_residual_noisy_rate():
    op = SpectralOperator([2.0])
    cov = validate_covariance([[1.0]], op)
    init = InitialLaw.deterministic(op, [1.0])
    # same Brownian path is not shared across N, so compare RMS over samples
    r = [_weak_residual(N, cov, init, op, M=4000, seed=N).rms for N in (16, 32, 64)]
    orders = np.log2(np.array(r[:-1]) / np.array(r[1:]))
    assert np.all(orders >= 0.5)


def test_weak_residual_requires_vanishing_test():
    op = SpectralOperator([2.0])
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [1.0]), TimeGrid(1, 4), 2,
                       0, record_increments=True)
    with pytest.raises(DomainError):
        pathwise_weak_residual(e, op, (TimePolynomial((1.0,)), 0))


def test_weak_residual_requires_increments():
    op = SpectralOperator([2.0])
    e = simulate_paths(op, zero_noise(op), InitialLaw.deterministic(op, [1.0]), TimeGrid(1, 4), 2, 0)
    with pytest.raises(ValidationError):
        pathwise_weak_residual(e, op, (TimePolynomial.vanishing_at(1.0), 0))


def test_initial_value_uncorrelated_with_noise():
    op = make_dirichlet_laplacian(2)
    cov = validate_covariance([[1.0, 0.3], [0.3, 0.5]], op)
    init = InitialLaw.gaussian(op, [0.5, 0.0], np.diag([1.0, 1.0]))
    e = simulate_paths(op, cov, init, TimeGrid(1.0, 16), 50_000, 17, record_increments=True)
    check = initial_noise_correlation(e, (TimePolynomial.vanishing_at(1.0), 0))
    assert check.passed and check.target == 0.0


def test_isometry_orthogonal_modes():
    op = make_dirichlet_laplacian(2)
    cov = validate_covariance(np.diag([1.0, 0.5]), op)
    p = TimePolynomial.vanishing_at(1.0)
    c = isometry_check(op, cov, TimeGrid(1.0, 8), (p, 0), (p, 1), 50_000, 3)
    assert c.target == 0.0 and c.passed


def test_isometry_constant_test_function():
    op = make_dirichlet_laplacian(2)
    cov = validate_covariance(np.diag([1.0, 0.5]), op)
    one = TimePolynomial((1.0,))
    c = isometry_check(op, cov, TimeGrid(2.0, 8), (one, 1), (one, 1), 50_000, 3)
    assert c.target == pytest.approx(0.5 * 2.0, rel=1e-15) and c.passed


def test_isometry_cross_mode():
    op = make_dirichlet_laplacian(2)
    cov = validate_covariance([[1.0, 0.3], [0.3, 0.5]], op)
    p1 = TimePolynomial.vanishing_at(1.0, 1)
    p2 = TimePolynomial.vanishing_at(1.0, 0)
    c = isometry_check(op, cov, TimeGrid(1.0, 8), (p1, 0), (p2, 1), 50_000, 3)
    # 0.3 * int_0^1 (1-t)^2 t dt = 0.3 / 12
    assert c.target == pytest.approx(0.3 / 12, rel=1e-14) and c.passed


def test_isometry_exact_per_draw():
    # a step-constant test function sees exactly the Brownian increments
    op = SpectralOperator([1.0])
    cov = validate_covariance([[2.0]], op)
    one = TimePolynomial((1.0,))
    checks = isometry_checks(op, cov, TimeGrid(1.0, 4), [((one, 0), (one, 0))], 100_000, 0)
    assert checks[0].target == 2.0 and checks[0].passed


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**63), K=st.integers(1, 3), N=st.integers(1, 6))
def test_estimator_invariants(seed, K, N):
    rng = np.random.default_rng(seed % 2**32)
    op = make_dirichlet_laplacian(K)
    B = rng.standard_normal((K, K))
    cov = validate_covariance(B @ B.T, op)
    init = InitialLaw.gaussian(op, rng.standard_normal(K), np.eye(K) * 0.1)
    e = simulate_paths(op, cov, init, TimeGrid(1.0, N), 300, seed)
    for f in (mc_second_moment(e), mc_covariance(e)):
        assert exchange_symmetric(f.value)
        assert np.all(f.std_error >= 0)
        assert equal_time_psd(f.value)
    assert np.all(np.isfinite(e.paths))
