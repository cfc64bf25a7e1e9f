"""Monte Carlo simulation of the mild solution and moment estimators.

Paths are advanced with the exact Ornstein-Uhlenbeck transition per step,

    X(t_{i+1}) = exp(-alpha dt) X(t_i) + eta_i,   eta_i ~ N(0, C(dt)),

where ``C(dt)`` is :func:`convolution_increment_covariance`. The Wiener
increment over the same step is drawn jointly with ``eta_i`` so that pathwise
identities can be checked against the noise that actually drove the path.
There is no time-discretization bias at the grid nodes. The recursion is run
from zero and ``S(t_i) X0`` is added separately, so noiseless paths equal the
semigroup values bit for bit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, DegenerateSampleError, ValidationError
from .linalg import check_psd, psd_sqrt, symmetrize
from .noise import NoiseCovariance, convolution_increment_covariance, factor
from .polynomial import TimePolynomial, product_integral, weak_integrand
from .rng import SampleStreams
from .spectral import SpectralOperator, TimeGrid, as_coefficients

__all__ = [
    "InitialLaw",
    "PathEnsemble",
    "EstimatorField",
    "storage_cap",
    "simulate_paths",
    "mc_mean",
    "mc_second_moment",
    "mc_covariance",
    "pathwise_weak_residual",
    "initial_noise_correlation",
    "isometry_check",
    "isometry_checks",
    "CHUNK",
]

DEFAULT_MAX_CELLS = 50_000_000
FULL_MOMENT_CAP = (16, 64)  # (K, N) up to which the full 4-D moment field is estimated
CHUNK = 2048


def storage_cap() -> int:
    """Maximum number of stored field entries (env ``MOMENTFIELD_MAX_CELLS``)."""
    raw = os.environ.get("MOMENTFIELD_MAX_CELLS")
    return int(float(raw)) if raw else DEFAULT_MAX_CELLS


@dataclass(frozen=True)
class InitialLaw:
    """Law of X0 in coefficient space: deterministic (``cov is None``) or Gaussian."""

    mean: np.ndarray
    cov: Optional[np.ndarray] = None

    @classmethod
    def deterministic(cls, op: SpectralOperator, vector) -> "InitialLaw":
        return cls(as_coefficients(op, vector).copy())

    @classmethod
    def gaussian(cls, op: SpectralOperator, mean, cov) -> "InitialLaw":
        c = symmetrize(cov, "initial covariance")
        if c.shape != (op.K, op.K):
            raise ValidationError(f"initial covariance must be {op.K}x{op.K}, got {c.shape}")
        check_psd(c, "initial covariance")
        return cls(as_coefficients(op, mean).copy(), c)

    @property
    def K(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        return np.zeros((self.K, self.K)) if self.cov is None else self.cov

    def second_moment(self) -> np.ndarray:
        return self.covariance() + np.outer(self.mean, self.mean)

    def factor(self) -> np.ndarray:
        return np.zeros((self.K, self.K)) if self.cov is None else psd_sqrt(self.cov)


@dataclass(frozen=True)
class PathEnsemble:
    """``paths[j, k, i] = X_k(t_i)`` for sample ``j``; ``increments[j, k, i] = W_k(t_{i+1}) - W_k(t_i)``."""

    paths: np.ndarray
    grid: TimeGrid
    master_seed: int
    increments: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.paths.shape[0]

    @property
    def K(self) -> int:
        return self.paths.shape[1]


@dataclass(frozen=True)
class EstimatorField:
    """Monte Carlo estimate with per-entry standard error.

    For moment fields ``value`` has shape ``(K, K, N+1, N+1)``, or ``(K, K, P)``
    when only the time pairs in ``time_pairs`` were estimated.
    """

    value: np.ndarray
    std_error: np.ndarray
    M: int
    kind: str
    time_pairs: Optional[tuple] = None


def _check_capacity(cells: int, what: str) -> None:
    cap = storage_cap()
    if cells > cap:
        raise CapacityError(f"{what} needs {cells} entries, above the cap of {cap} "
                            "(set MOMENTFIELD_MAX_CELLS to raise it)")


def _chunks(M: int, size: int = CHUNK):
    return [(s, min(size, M - s)) for s in range(0, M, size)]


def _step_factor(op: SpectralOperator, cov: NoiseCovariance, dt: float) -> np.ndarray:
    """Factor of the joint covariance of (stochastic convolution, Wiener increment) over one step."""
    C = convolution_increment_covariance(op, cov, dt)
    D = cov.q_matrix * (-np.expm1(-op.eigenvalues * dt) / op.eigenvalues)[:, None]
    joint = np.block([[C, D], [D.T, dt * cov.q_matrix]])
    return psd_sqrt(0.5 * (joint + joint.T))


def simulate_paths(op: SpectralOperator, cov: NoiseCovariance, init: InitialLaw,
                   grid: TimeGrid, M: int, master_seed: int, threads: int = 1,
                   record_increments: bool = False) -> PathEnsemble:
    """Sample ``M`` paths of the mild solution at the grid nodes, exactly in law.

    Sample ``j`` consumes the Philox stream keyed by ``(master_seed, j)``: first
    K normals for X0, then 2K per step for the joint (convolution, increment)
    draw. Output is bit-identical for any ``threads``.
    """
    if int(M) != M or M < 1:
        raise ValidationError(f"sample count must be a positive integer, got {M!r}")
    if cov.K != op.K or init.K != op.K:
        raise ValidationError("operator, noise and initial law disagree on K")
    K, N = op.K, grid.N
    _check_capacity(M * K * (N + 1) + (M * K * N if record_increments else 0), "path ensemble")

    decay = np.exp(-op.eigenvalues * grid.dt)
    node_decay = op.decay(grid.nodes)
    J = _step_factor(op, cov, grid.dt)
    L0 = init.factor()
    width = K + 2 * K * N
    paths = np.empty((M, K, N + 1))
    incs = np.empty((M, K, N)) if record_increments else None

    def work(chunk):
        start, count = chunk
        Z = SampleStreams(master_seed).normals(start, count, width)
        # einsum keeps these small contractions out of BLAS so results do not
        # depend on which thread runs the chunk
        X0 = init.mean + np.einsum("cm,km->ck", Z[:, :K], L0)
        steps = np.einsum("cnm,km->cnk", Z[:, K:].reshape(count, N, 2 * K), J)
        out = paths[start:start + count]
        # initial term through S(t_i) directly, noise term by the OU recursion
        np.multiply(X0[:, :, None], node_decay, out=out)
        Y = np.zeros((count, K))
        for i in range(N):
            Y = decay * Y + steps[:, i, :K]
            out[:, :, i + 1] += Y
        if incs is not None:
            incs[start:start + count] = steps[:, :, K:].transpose(0, 2, 1)

    chunks = _chunks(M)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, chunks))
    else:
        for c in chunks:
            work(c)
    paths.setflags(write=False)
    if incs is not None:
        incs.setflags(write=False)
    return PathEnsemble(paths, grid, int(master_seed), incs)


# -- estimators -------------------------------------------------------------


class _Neumaier:
    """Compensated accumulator for arrays, summed in a fixed order."""

    def __init__(self):
        self.total = None
        self.comp = None

    def add(self, x):
        x = np.asarray(x, dtype=float)
        if self.total is None:
            self.total = x.copy()
            self.comp = np.zeros_like(x)
            return
        t = self.total + x
        big = np.abs(self.total) >= np.abs(x)
        self.comp += np.where(big, (self.total - t) + x, (x - t) + self.total)
        self.total = t

    @property
    def value(self):
        return self.total + self.comp


def _column_mean(Y: np.ndarray) -> np.ndarray:
    # shifted by the first sample: constant columns come out exact, so their
    # centered values and standard errors are exactly zero
    shift = Y[0]
    acc = _Neumaier()
    for s, n in _chunks(Y.shape[0]):
        acc.add((Y[s:s + n] - shift).sum(axis=0))
    return shift + acc.value / Y.shape[0]


def _mirror_upper(a: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(a.shape[0], 1)
    a[(iu[1], iu[0])] = a[iu]
    return a


def _product_moments(Y: np.ndarray, A: np.ndarray, B: np.ndarray, mu: np.ndarray):
    """Centered moments needed for the mean and variance of products ``Y[:, a] Y[:, b]``.

    With ``Z = Y - mu`` returns ``zbar = E[Z]``, ``G = E[Z_a Z_b]``,
    ``H = E[Z_a Z_b^2]``, ``H2 = E[Z_a^2 Z_b]`` and ``F = E[Z_a^2 Z_b^2]``.
    """
    accs = [_Neumaier() for _ in range(6)]
    for s, n in _chunks(Y.shape[0]):
        Z = Y[s:s + n] - mu
        Za, Zb = Z[:, A], Z[:, B]
        Za2, Zb2 = Za * Za, Zb * Zb
        for acc, part in zip(accs, (Za.sum(0), Zb.sum(0), Za.T @ Zb, Za.T @ Zb2,
                                    Za2.T @ Zb, Za2.T @ Zb2)):
            acc.add(part)
    M = Y.shape[0]
    za, zb, G, H, H2, F = (acc.value / M for acc in accs)
    return za, zb, G, H, H2, F


def _product_estimate(Y, A, B, mu, centered: bool):
    """Mean of ``Y_a Y_b`` (or of centered products) and its standard error."""
    M = Y.shape[0]
    za, zb, G, H, H2, F = _product_moments(Y, A, B, mu)
    if centered:
        cross = G - np.outer(za, zb)
        value = cross * (M / (M - 1))
        var = F - G * G
    else:
        ma, mb = mu[A], mu[B]
        value = np.outer(ma, mb) + np.outer(ma, zb) + np.outer(za, mb) + G
        var_a = _diag_moment(Y, A, mu)
        var_b = _diag_moment(Y, B, mu)
        var = (np.outer(ma * ma, var_b) + np.outer(var_a, mb * mb) + 2 * np.outer(ma, mb) * G
               + 2 * ma[:, None] * H + 2 * mb[None, :] * H2 + F - G * G)
    var = np.clip(var, 0.0, None)
    se = np.sqrt(var / (M - 1)) if M > 1 else np.full_like(var, np.inf)
    return value, se


def _diag_moment(Y, cols, mu):
    acc = _Neumaier()
    for s, n in _chunks(Y.shape[0]):
        Z = Y[s:s + n, cols] - mu[cols]
        acc.add((Z * Z).sum(0))
    return acc.value / Y.shape[0]


def mc_mean(e: PathEnsemble) -> EstimatorField:
    """Sample mean per (mode, time) with standard error ``std / sqrt(M)``."""
    M, K, n = e.paths.shape
    Y = e.paths.reshape(M, K * n)
    mu = _column_mean(Y)
    if M > 1:
        se = np.sqrt(_diag_moment(Y, slice(None), mu) / (M - 1))
    else:
        se = np.full_like(mu, np.inf)
    return EstimatorField(mu.reshape(K, n), se.reshape(K, n), M, "mean")


def _moment_field(e: PathEnsemble, time_pairs, centered: bool, kind: str) -> EstimatorField:
    M, K, n = e.paths.shape
    if centered and M < 2:
        raise DegenerateSampleError("covariance estimate needs at least two samples")
    Y = e.paths.reshape(M, K * n)
    mu = _column_mean(Y)
    full = time_pairs is None and K <= FULL_MOMENT_CAP[0] and n - 1 <= FULL_MOMENT_CAP[1]
    if full:
        _check_capacity((K * n) ** 2, "moment field")
        cols = np.arange(K * n)
        value, se = _product_estimate(Y, cols, cols, mu, centered)
        value, se = _mirror_upper(value), _mirror_upper(se)
        shape = (K, n, K, n)
        value = value.reshape(shape).transpose(0, 2, 1, 3)
        se = se.reshape(shape).transpose(0, 2, 1, 3)
        return EstimatorField(np.ascontiguousarray(value), np.ascontiguousarray(se), M, kind)
    pairs = [(i, i) for i in range(n)] if time_pairs is None else [tuple(p) for p in time_pairs]
    value = np.empty((K, K, len(pairs)))
    se = np.empty_like(value)
    modes = np.arange(K) * n
    for p, (i, j) in enumerate(pairs):
        A, B = modes + i, modes + j
        v, s = _product_estimate(Y, A, B, mu, centered)
        if i == j:
            v, s = _mirror_upper(v), _mirror_upper(s)
        value[:, :, p], se[:, :, p] = v, s
    return EstimatorField(value, se, M, kind, tuple(pairs))


def mc_second_moment(e: PathEnsemble, time_pairs: Optional[Sequence] = None) -> EstimatorField:
    """Estimate ``E[X_k(t_i) X_l(t_j)]``.

    The full ``(K, K, N+1, N+1)`` field is returned for ``K <= 16`` and
    ``N <= 64``; beyond that (or when ``time_pairs`` is given) only the listed
    ``(i, j)`` pairs, defaulting to the equal-time slices.
    """
    return _moment_field(e, time_pairs, False, "second-moment")


def mc_covariance(e: PathEnsemble, time_pairs: Optional[Sequence] = None) -> EstimatorField:
    """Unbiased sample covariance (factor ``M/(M-1)``) of the paths."""
    return _moment_field(e, time_pairs, True, "covariance")


# -- pathwise checks ---------------------------------------------------------


@dataclass(frozen=True)
class WeakResidualStats:
    residuals: np.ndarray
    max_abs: float
    rms: float
    mean: float


def pathwise_weak_residual(e: PathEnsemble, op: SpectralOperator,
                           test: tuple) -> WeakResidualStats:
    """Per-sample residual of the pathwise weak formulation for ``v = p(t) e_n``.

    ``<X, (-d/dt + A) v>`` is integrated by the composite trapezoid rule on the
    grid and ``int p dW_n`` by the left-point sum over the recorded increments.
    """
    p, n = test
    p.require_vanishing(e.grid.T)
    if e.increments is None:
        raise ValidationError("ensemble was simulated without record_increments=True")
    t = e.grid.nodes
    g = weak_integrand(p, op.eigenvalues[n])(t)
    X = e.paths[:, n, :]
    lhs = np.trapezoid(X * g, dx=e.grid.dt, axis=1)
    stoch = e.increments[:, n, :] @ p(t[:-1])
    r = lhs - X[:, 0] * p(0.0) - stoch
    return WeakResidualStats(r, float(np.max(np.abs(r))), float(np.sqrt(np.mean(r * r))),
                             float(np.mean(r)))


@dataclass(frozen=True)
class MCCheck:
    estimate: float
    target: float
    std_error: float
    se_multiplier: float

    @property
    def z(self) -> float:
        gap = abs(self.estimate - self.target)
        return gap / self.std_error if self.std_error > 0 else (0.0 if gap == 0 else np.inf)

    @property
    def passed(self) -> bool:
        return self.z <= self.se_multiplier


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    return m, float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else np.inf


def initial_noise_correlation(e: PathEnsemble, test: tuple,
                              se_multiplier: float = 4.0) -> MCCheck:
    """Estimate ``E[<X0, v(0)> int <v, dW>]``, which vanishes for X0 independent of W."""
    p, n = test
    if e.increments is None:
        raise ValidationError("ensemble was simulated without record_increments=True")
    t = e.grid.nodes
    prod = e.paths[:, n, 0] * p(0.0) * (e.increments[:, n, :] @ p(t[:-1]))
    est, se = _mean_se(prod)
    return MCCheck(est, 0.0, se, se_multiplier)


def _legendre_projection(p: TimePolynomial, grid: TimeGrid, degree: int) -> np.ndarray:
    """``c[i, j] = int_{step i} p(t) P_j(t) dt`` against step-wise orthonormal Legendre polynomials."""
    x, w = np.polynomial.legendre.leggauss(degree + 1)
    h = grid.dt
    t = grid.nodes[:-1, None] + 0.5 * h * (x + 1.0)
    P = np.polynomial.legendre.legvander(x, degree) * np.sqrt((2 * np.arange(degree + 1) + 1) / h)
    return (p(t) * (0.5 * h * w)) @ P


def isometry_checks(op: SpectralOperator, cov: NoiseCovariance, grid: TimeGrid, pairs,
                    M: int, master_seed: int, se_multiplier: float = 4.0) -> list[MCCheck]:
    """Monte Carlo check of ``E[int <v1, dW> int <v2, dW>] = sum_nm q_nm int p1 p2``.

    Each step's white noise is expanded in orthonormal Legendre polynomials
    whose coefficients are independent standard normals; projecting the test
    polynomials on that basis gives the weak stochastic integrals exactly. All
    pairs share one set of draws. ``pairs`` holds ``((p1, n1), (p2, n2))``.
    """
    if int(M) != M or M < 2:
        raise DegenerateSampleError("isometry check needs at least two samples")
    K, N = op.K, grid.N
    polys = [v[0] for pair in pairs for v in pair]
    deg = max(p.degree for p in polys)
    width = K * N * (deg + 1)
    _check_capacity(min(M, CHUNK) * width, "white-noise draws")
    L = factor(cov).L
    coef = [[_legendre_projection(v[0], grid, deg) for v in pair] for pair in pairs]
    products = np.empty((len(pairs), M))
    streams = SampleStreams(master_seed)
    for s, n in _chunks(M):
        zeta = streams.normals(s, n, width).reshape(n, K, N, deg + 1)
        for a, ((v1, v2), (c1, c2)) in enumerate(zip(pairs, coef)):
            i1 = np.einsum("cmij,ij->cm", zeta, c1) @ L[v1[1]]
            i2 = np.einsum("cmij,ij->cm", zeta, c2) @ L[v2[1]]
            products[a, s:s + n] = i1 * i2
    out = []
    for a, ((p1, n1), (p2, n2)) in enumerate(pairs):
        est, se = _mean_se(products[a])
        target = cov.q_matrix[n1, n2] * product_integral(p1, p2, 0.0, grid.T)
        out.append(MCCheck(est, target, se, se_multiplier))
    return out


def isometry_check(op: SpectralOperator, cov: NoiseCovariance, grid: TimeGrid, v1, v2,
                   M: int, master_seed: int, se_multiplier: float = 4.0) -> MCCheck:
    """Single-pair form of :func:`isometry_checks`."""
    return isometry_checks(op, cov, grid, [(v1, v2)], M, master_seed, se_multiplier)[0]
