"""Deterministic second-moment and covariance fields of the additive-noise SPDE.

For ``dX + AX dt = dW`` with Q-Wiener noise the second moment
``u(t, t') = E[X(t) (x) X(t')]`` solves the tensorized parabolic problem with
initial value ``u0 = E[X0 (x) X0]`` and forcing ``delta (x) q`` concentrated on
the diagonal of ``[0, T]^2``. In the eigenbasis of A its solution is the
two-time Duhamel formula

    u_kl(t, t') = exp(-a_k t - a_l t') u0_kl
                  + q_kl * int_0^m exp(-a_k (t - s) - a_l (t' - s)) ds,   m = min(t, t')

which :class:`TensorDuhamel` evaluates in closed form. The residual and norm
checks in this module validate that formula against the weak formulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .linalg import PSD_RTOL, check_psd, is_psd, symmetrize
from .noise import NoiseCovariance
from .polynomial import TimePolynomial, product_integral, weak_integrand
from .quadrature import integrate_kinked
from .spectral import SpectralOperator, TimeGrid, as_coefficients

__all__ = [
    "TensorDuhamel",
    "MomentField",
    "ResidualReport",
    "BoundaryReport",
    "XNormReport",
    "DeltaQReport",
    "solve_second_moment",
    "solve_covariance",
    "solve_mean",
    "variational_residual",
    "variational_residuals",
    "boundary_residual",
    "xnorm_squared",
    "delta_q_membership",
    "exchange_symmetric",
    "equal_time_psd",
    "gram_psd",
]


class TensorDuhamel:
    """Closed-form evaluator of the tensorized moment equation's solution.

    Parameters
    ----------
    op : SpectralOperator
    q : (K, K) array
        Spatial kernel of the diagonal forcing (the noise covariance matrix).
    u0 : (K, K) array
        Value at ``(0, 0)``.
    """

    def __init__(self, op: SpectralOperator, q: np.ndarray, u0: np.ndarray):
        self.op = op
        self.q = np.asarray(q, dtype=float)
        self.u0 = np.asarray(u0, dtype=float)
        a = op.eigenvalues
        self._a = a[:, None, None]
        self._b = a[None, :, None]
        self._sum = np.add.outer(a, a)[:, :, None]

    @property
    def K(self) -> int:
        return self.op.K

    def __call__(self, t, tp) -> np.ndarray:
        """Values ``u_kl(t, tp)``, shape ``(K, K) + broadcast(t, tp).shape``."""
        t, tp = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(tp, dtype=float))
        shape = t.shape
        t, tp = t.ravel()[None, None, :], tp.ravel()[None, None, :]
        m = np.minimum(t, tp)
        a, b, s = self._a, self._b, self._sum
        out = np.exp(-a * t - b * tp) * self.u0[:, :, None]
        # exp(-a t - b t') (exp(s m) - 1) / s rewritten so no factor can overflow
        out += self.q[:, :, None] * (np.exp(-a * (t - m) - b * (tp - m)) * (-np.expm1(-s * m) / s))
        return out.reshape((self.K, self.K) + shape)

    @property
    def max_rate(self) -> float:
        return float(self.op.eigenvalues[-1])


@dataclass(frozen=True)
class MomentField:
    """Field ``values[k, l, i, j] = u_kl(t_i, t_j)`` on a time grid."""

    values: np.ndarray
    grid: TimeGrid
    provenance: str
    evaluator: Optional[TensorDuhamel] = field(default=None, repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def equal_time(self, i: int) -> np.ndarray:
        return self.values[:, :, i, i]

    def gram_matrix(self) -> np.ndarray:
        """Reshape into the ``K(N+1)`` square matrix indexed by ``(k, i)``."""
        return gram_matrix(self.values)


def gram_matrix(values: np.ndarray) -> np.ndarray:
    K, _, n, _ = values.shape
    return values.transpose(0, 2, 1, 3).reshape(K * n, K * n)


def exchange_symmetric(values: np.ndarray) -> bool:
    """``values[k, l, i, j] == values[l, k, j, i]`` bit for bit."""
    return bool(np.array_equal(values, values.transpose(1, 0, 3, 2)))


def equal_time_psd(values: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    n = values.shape[2]
    return all(is_psd(values[:, :, i, i], rtol) for i in range(n))


def gram_psd(values: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    return is_psd(gram_matrix(values), rtol)


def _initial_matrix(op: SpectralOperator, u0, name: str) -> np.ndarray:
    u0 = symmetrize(u0, name)
    if u0.shape != (op.K, op.K):
        raise ValidationError(f"{name} must be {op.K}x{op.K}, got {u0.shape}")
    check_psd(u0, name)
    return u0


def _solve(op, cov: NoiseCovariance, u0, grid: TimeGrid, provenance: str) -> MomentField:
    if cov.K != op.K:
        raise ValidationError(f"noise covariance has K={cov.K}, operator has K={op.K}")
    u0 = _initial_matrix(op, u0, "initial moment")
    ev = TensorDuhamel(op, cov.q_matrix, u0)
    values = ev(grid.nodes[:, None], grid.nodes[None, :])
    values.setflags(write=False)
    return MomentField(values, grid, provenance, ev)


def solve_second_moment(op: SpectralOperator, cov: NoiseCovariance, u0,
                        grid: TimeGrid) -> MomentField:
    """Second moment of the mild solution given ``u0 = E[X0 (x) X0]``."""
    return _solve(op, cov, u0, grid, "second-moment")


def solve_covariance(op: SpectralOperator, cov: NoiseCovariance, cov0,
                     grid: TimeGrid) -> MomentField:
    """Covariance of the mild solution given ``Cov(X0)``; same equation, centered data."""
    return _solve(op, cov, cov0, grid, "covariance")


def solve_mean(op: SpectralOperator, mean0, grid: TimeGrid) -> np.ndarray:
    """Mean field ``S(t_i) mean0``, shape ``(K, N+1)``."""
    mean0 = as_coefficients(op, mean0)
    return op.decay(grid.nodes) * mean0[:, None]


# -- weak formulation -------------------------------------------------------


@dataclass(frozen=True)
class ResidualReport:
    modes: tuple
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    scale: float
    quadrature_error: float
    passed: bool


def variational_residuals(u: TensorDuhamel, T: float, tests, tolerance: float = 1e-8,
                          quad_rtol: float = 1e-11) -> list[list[ResidualReport]]:
    """Check the tensorized weak identity for every pair of one-sided test functions.

    Parameters
    ----------
    u : TensorDuhamel
    T : float
        Horizon.
    tests : sequence of (TimePolynomial, int)
        Test functions ``p(t) e_k``; each ``p`` must vanish at ``T``.
    tolerance : float
        A pair passes when ``|LHS - RHS| <= tolerance * max(1, |RHS|)``.

    Returns
    -------
    reports : list of lists
        ``reports[a][b]`` is the report for ``tests[a] (x) tests[b]``.

    Notes
    -----
    ``LHS = int int u_kl(t, t') g1(t) g2(t') dt dt'`` with ``g = -p' + alpha p``,
    integrated by the diagonal-split rule. ``RHS = q_kl int_0^T p1 p2 ds
    + u0_kl p1(0) p2(0)``, the pairing of the diagonal measure with the test
    function, computed from the exact antiderivative.
    """
    alpha = u.op.eigenvalues
    for p, _ in tests:
        p.require_vanishing(T)
    modes = np.array([k for _, k in tests])
    if modes.size and (modes.min() < 0 or modes.max() >= u.K):
        raise ValidationError(f"test mode index out of range 0..{u.K - 1}")
    weak = [weak_integrand(p, alpha[k]) for p, k in tests]

    def lhs(rule):
        G = np.array([g(rule.t) for g in weak]) * rule.w
        Gp = np.array([g(rule.tp) for g in weak])
        U = u(rule.t, rule.tp)
        out = np.empty((len(tests), len(tests)))
        for k in np.unique(modes):
            A = np.flatnonzero(modes == k)
            for l in np.unique(modes):
                B = np.flatnonzero(modes == l)
                out[np.ix_(A, B)] = (G[A] * U[k, l]) @ Gp[B].T
        return out

    value, err, _ = integrate_kinked(lhs, T, 2.0 * u.max_rate, rtol=quad_rtol)
    reports = []
    for a, (p1, k) in enumerate(tests):
        row = []
        for b, (p2, l) in enumerate(tests):
            rhs = u.q[k, l] * product_integral(p1, p2, 0.0, T) + u.u0[k, l] * p1(0.0) * p2(0.0)
            res = float(value[a, b] - rhs)
            scale = max(1.0, abs(rhs))
            row.append(ResidualReport((int(k), int(l)), float(value[a, b]), float(rhs), res,
                                      tolerance, scale, float(err[a, b]),
                                      abs(res) <= tolerance * scale))
        reports.append(row)
    return reports


def variational_residual(u: TensorDuhamel, T: float, v1, v2,
                         tolerance: float = 1e-8) -> ResidualReport:
    """Weak-form residual for a single product test function ``v1 (x) v2``."""
    return variational_residuals(u, T, [v1, v2], tolerance)[0][1]


@dataclass(frozen=True)
class BoundaryReport:
    steps: tuple
    residuals: tuple
    orders: tuple
    origin_exact: bool

    @property
    def min_order(self) -> float:
        return min(self.orders)


def boundary_residual(u: TensorDuhamel, T: float, steps=(1e-2, 5e-3, 2.5e-3),
                      n_points: int = 9) -> BoundaryReport:
    """Central-difference check of the axis equations and of ``u(0, 0) = u0``.

    Along ``t' = 0`` the field must satisfy ``(d/dt + a_k) u_kl(t, 0) = 0`` and
    along ``t = 0`` the mirrored equation in ``t'``. The maximum residual over
    modes and interior sample points is reported per step, with the observed
    convergence order between consecutive steps.
    """
    alpha = u.op.eigenvalues
    hmax = max(steps)
    pts = np.linspace(hmax, T - hmax, n_points + 2)[1:-1]
    zero = np.zeros_like(pts)
    residuals = []
    for h in steps:
        d_t = (u(pts + h, zero) - u(pts - h, zero)) / (2 * h) + alpha[:, None, None] * u(pts, zero)
        d_tp = (u(zero, pts + h) - u(zero, pts - h)) / (2 * h) + alpha[None, :, None] * u(zero, pts)
        residuals.append(float(max(np.abs(d_t).max(), np.abs(d_tp).max())))
    orders = tuple(float(np.log2(r0 / r1)) if r1 > 0 else np.inf
                   for r0, r1 in zip(residuals[:-1], residuals[1:]))
    origin = np.array_equal(u(0.0, 0.0), u.u0)
    return BoundaryReport(tuple(steps), tuple(residuals), orders, bool(origin))


@dataclass(frozen=True)
class XNormReport:
    value_squared: float
    norm: float
    bound: float
    quadrature_error: float
    holds: bool


def xnorm_squared(u: TensorDuhamel, T: float, rtol: float = 1e-10) -> XNormReport:
    """``sum_kl a_k a_l int int u_kl^2`` and the a-priori bound ``(Tr u0 + T Tr q) / 2``."""
    weights = np.outer(u.op.eigenvalues, u.op.eigenvalues)

    def integral(rule):
        U = u(rule.t, rule.tp)
        return np.einsum("kl,klp,p->", weights, U * U, rule.w)

    value, err, _ = integrate_kinked(integral, T, 4.0 * u.max_rate, rtol=rtol)
    value = max(float(value), 0.0)
    bound = 0.5 * (float(np.trace(u.u0)) + T * float(np.trace(u.q)))
    nrm = float(np.sqrt(value))
    return XNormReport(value, nrm, bound, float(err), nrm <= bound)


@dataclass(frozen=True)
class DeltaQReport:
    trace_AQ: float
    q_norm_V2: float
    admissible: bool
    profile_exponent: Optional[float] = None
    profile_admissible: Optional[bool] = None
    partial_sums: dict = field(default_factory=dict)


def delta_q_membership(op: SpectralOperator, cov: NoiseCovariance,
                       profile: Optional[tuple] = None,
                       truncations=(8, 16, 32)) -> DeltaQReport:
    """Report ``Tr(AQ)`` and ``||q||_{V(x)V}`` for the truncated noise.

    ``profile = (c, p)`` declares the untruncated eigenvalues ``gamma_n = c n^-p``.
    Against Dirichlet-Laplacian growth ``alpha_n ~ n^2`` the series ``Tr(AQ)``
    converges iff ``p > 3``; partial sums at the given truncations are listed.
    """
    a = op.eigenvalues
    trace_aq = float(a @ np.diag(cov.q_matrix))
    vnorm = float(np.sqrt(np.sum(np.outer(a, a) * cov.q_matrix ** 2)))
    report = dict(trace_AQ=trace_aq, q_norm_V2=vnorm,
                  admissible=bool(np.isfinite(trace_aq) and np.isfinite(vnorm)))
    if profile is not None:
        c, p = profile
        sums = {}
        for n in truncations:
            k = np.arange(1, n + 1, dtype=float)
            sums[n] = float(np.sum((k * np.pi) ** 2 * c * k ** (-float(p))))
        report.update(profile_exponent=float(p),
                      profile_admissible=bool(c == 0 or p > 3), partial_sums=sums)
    return DeltaQReport(**report)
