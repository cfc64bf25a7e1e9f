import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from momentfield import (
    DomainError,
    SpectralOperator,
    TimeGrid,
    ValidationError,
    make_dirichlet_laplacian,
    norm,
    semigroup_apply,
    smoothing_integral,
)

reals = st.floats(-10, 10, allow_nan=False, allow_subnormal=False)
coeffs = st.lists(reals, min_size=1, max_size=6)


def test_semigroup_identity_at_zero():
    op = SpectralOperator([1.0])
    assert semigroup_apply(op, 0.0, [1.0]).tolist() == [1.0]


def test_semigroup_scalar():
    op = SpectralOperator([2.0])
    assert semigroup_apply(op, 0.5, [3.0])[0] == pytest.approx(3 * math.exp(-1), rel=1e-15)


def test_semigroup_dirichlet_pair():
    op = make_dirichlet_laplacian(2)
    got = semigroup_apply(op, 0.1, [1.0, 1.0])
    expected = [math.exp(-0.1 * math.pi**2), math.exp(-0.4 * math.pi**2)]
    np.testing.assert_allclose(got, expected, rtol=1e-15)


def test_semigroup_rejects_negative_time():
    with pytest.raises(DomainError):
        semigroup_apply(make_dirichlet_laplacian(1), -1e-3, [1.0])


def test_length_mismatch():
    with pytest.raises(ValidationError):
        norm(make_dirichlet_laplacian(2), "H", [1.0])


@pytest.mark.parametrize("space, expected", [("H", 3.0), ("V", 6.0), ("Vstar", 1.5)])
def test_norm_weights(space, expected):
    assert norm(SpectralOperator([4.0]), space, [3.0]) == expected


def test_norm_unknown_space():
    with pytest.raises(ValueError):
        norm(SpectralOperator([4.0]), "L2", [3.0])


def test_smoothing_integral_saturates():
    assert smoothing_integral(SpectralOperator([1.0]), 100.0, [1.0]) == pytest.approx(0.5, rel=1e-15)


def test_smoothing_integral_vanishes_at_zero_horizon():
    assert smoothing_integral(make_dirichlet_laplacian(3), 0.0, [1.0, -2.0, 0.5]) == 0.0


def test_smoothing_integral_against_quadrature():
    alpha = np.array([1.0, 2.0])
    got = smoothing_integral(SpectralOperator(alpha), 1.0, [1.0, 1.0])
    oracle, _ = quad(lambda t: np.sum(alpha * np.exp(-2 * alpha * t)), 0.0, 1.0, epsabs=0, epsrel=1e-13)
    assert got == pytest.approx(oracle, rel=1e-12)
    assert got == pytest.approx((1 - math.exp(-2)) / 2 + (1 - math.exp(-4)) / 2, rel=1e-15)


@pytest.mark.parametrize("K, expected", [(1, [1.0]), (3, [1.0, 4.0, 9.0])])
def test_dirichlet_eigenvalues(K, expected):
    op = make_dirichlet_laplacian(K)
    np.testing.assert_allclose(op.eigenvalues, np.array(expected) * math.pi**2, rtol=1e-15)
    assert op.K == K


def test_dirichlet_strictly_increasing():
    a = make_dirichlet_laplacian(2).eigenvalues
    assert a[0] < a[1]


@pytest.mark.parametrize("K", [0, -1, 2.5])
def test_dirichlet_rejects_bad_K(K):
    with pytest.raises(DomainError):
        make_dirichlet_laplacian(K)


@pytest.mark.parametrize("alpha", [[], [0.0], [-1.0], [2.0, 1.0], [1.0, np.inf]])
def test_operator_invariants(alpha):
    with pytest.raises(DomainError):
        SpectralOperator(alpha)


def test_operator_is_immutable():
    op = make_dirichlet_laplacian(2)
    with pytest.raises(ValueError):
        op.eigenvalues[0] = 1.0


def test_time_grid_nodes():
    g = TimeGrid(1.0, 4)
    assert g.nodes.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert g.dt == 0.25
    g = TimeGrid(0.3, 7)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 0.3


@pytest.mark.parametrize("T, N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 1.5)])
def test_time_grid_rejects(T, N):
    with pytest.raises(DomainError):
        TimeGrid(T, N)


@settings(max_examples=200, deadline=None)
@given(K=st.integers(1, 6), s=st.floats(0, 0.1), t=st.floats(0, 0.1), data=st.data())
def test_semigroup_property(K, s, t, data):
    op = make_dirichlet_laplacian(K)
    v = np.array(data.draw(st.lists(reals, min_size=K, max_size=K)))
    lhs = semigroup_apply(op, s, semigroup_apply(op, t, v))
    rhs = semigroup_apply(op, s + t, v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-14, atol=0)


@settings(max_examples=200, deadline=None)
@given(v=coeffs, t=st.floats(0, 50))
def test_contraction(v, t):
    op = make_dirichlet_laplacian(len(v))
    assert norm(op, "H", semigroup_apply(op, t, v)) <= norm(op, "H", v)


@settings(max_examples=200, deadline=None)
@given(v=coeffs)
def test_norm_ordering(v):
    op = make_dirichlet_laplacian(len(v))
    assert norm(op, "Vstar", v) <= norm(op, "H", v) <= norm(op, "V", v)


@settings(max_examples=200, deadline=None)
@given(v=coeffs, T=st.floats(0, 100))
def test_smoothing_bound(v, T):
    op = make_dirichlet_laplacian(len(v))
    # same summation order as the integral, so termwise rounding stays monotone
    assert smoothing_integral(op, T, v) <= 0.5 * float(np.sum(np.square(v)))
