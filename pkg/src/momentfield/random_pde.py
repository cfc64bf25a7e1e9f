"""Parabolic equations with random data: ``(d/dt + A) U = F``, ``U(0) = U0``.

The forcing is piecewise constant in time on the grid intervals and jointly
Gaussian with U0. Second moment and covariance of U solve the same tensorized
equation as in the SPDE case, with data ``E[U0 (x) U0]`` and ``E[F (x) F]``
(or the centered versions), but only when U0 and F are independent and, for
the second moment, at least one of them has mean zero. The solvers here
refuse to run otherwise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConditionError, ValidationError
from .linalg import check_psd, psd_sqrt, symmetrize
from .moment import MomentField
from .polynomial import TimePolynomial
from .rng import SampleStreams
from .simulator import PathEnsemble, _check_capacity, _chunks
from .spectral import SpectralOperator, TimeGrid

__all__ = [
    "RandomDataModel",
    "SecondMomentData",
    "kron_covariance",
    "sample_random_solution",
    "simulate_random_solutions",
    "solve_random_second_moment",
    "solve_random_covariance",
    "cross_term_estimate",
]


def kron_covariance(time_block, mode_block) -> np.ndarray:
    """Forcing covariance in Kronecker form, indexed by ``interval * K + mode``."""
    return np.kron(np.asarray(time_block, dtype=float), np.asarray(mode_block, dtype=float))


@dataclass(frozen=True)
class SecondMomentData:
    """Moment data of (U0, F); forcing blocks are indexed by ``interval * K + mode``."""

    M2_U0: np.ndarray
    M2_F: np.ndarray
    Cov_U0: np.ndarray
    Cov_F: np.ndarray
    independent: bool
    zero_mean_U0: bool
    zero_mean_F: bool


@dataclass(frozen=True)
class RandomDataModel:
    """Joint Gaussian law of the initial value and the piecewise-constant forcing.

    ``F_mean[a, k]`` is the mean of the forcing on grid interval ``a`` in mode
    ``k``; ``F_cov`` and ``cross_cov = Cov(U0, F)`` use the flattened index
    ``a * K + k``. ``cross_cov = None`` declares U0 and F independent.
    """

    U0_mean: np.ndarray
    U0_cov: np.ndarray
    F_mean: np.ndarray
    F_cov: np.ndarray
    cross_cov: Optional[np.ndarray] = None

    @classmethod
    def build(cls, op: SpectralOperator, grid: TimeGrid, U0_mean=None, U0_cov=None,
              F_mean=None, F_cov=None, cross_cov=None) -> "RandomDataModel":
        K, N = op.K, grid.N
        m0 = np.zeros(K) if U0_mean is None else np.asarray(U0_mean, dtype=float)
        c0 = np.zeros((K, K)) if U0_cov is None else symmetrize(U0_cov, "U0 covariance")
        mf = np.zeros((N, K)) if F_mean is None else np.asarray(F_mean, dtype=float)
        cf = np.zeros((N * K, N * K)) if F_cov is None else symmetrize(F_cov, "forcing covariance")
        if m0.shape != (K,) or c0.shape != (K, K):
            raise ValidationError(f"U0 law must have mean ({K},) and covariance ({K}, {K})")
        if mf.shape != (N, K):
            raise ValidationError(f"forcing mean must have shape ({N}, {K}), got {mf.shape}")
        if cf.shape != (N * K, N * K):
            raise ValidationError(f"forcing covariance must be {N * K}x{N * K}, got {cf.shape}")
        cross = None
        if cross_cov is not None:
            cross = np.asarray(cross_cov, dtype=float)
            if cross.shape != (K, N * K):
                raise ValidationError(f"cross covariance must have shape ({K}, {N * K})")
            if not np.any(cross):
                cross = None
        model = cls(m0, c0, mf, cf, cross)
        check_psd(model.joint_covariance(), "joint (U0, F) covariance")
        return model

    @property
    def K(self) -> int:
        return self.U0_mean.size

    @property
    def N(self) -> int:
        return self.F_mean.shape[0]

    @property
    def independent(self) -> bool:
        return self.cross_cov is None

    def joint_covariance(self) -> np.ndarray:
        cross = np.zeros((self.K, self.F_cov.shape[0])) if self.cross_cov is None else self.cross_cov
        return np.block([[self.U0_cov, cross], [cross.T, self.F_cov]])

    def joint_mean(self) -> np.ndarray:
        return np.concatenate([self.U0_mean, self.F_mean.ravel()])

    def cross_second_moment(self) -> np.ndarray:
        """``E[U0 F^T]``, shape ``(K, N*K)``."""
        cross = 0.0 if self.cross_cov is None else self.cross_cov
        return cross + np.outer(self.U0_mean, self.F_mean.ravel())

    def second_moment_data(self) -> SecondMomentData:
        f = self.F_mean.ravel()
        return SecondMomentData(
            M2_U0=self.U0_cov + np.outer(self.U0_mean, self.U0_mean),
            M2_F=self.F_cov + np.outer(f, f),
            Cov_U0=self.U0_cov,
            Cov_F=self.F_cov,
            independent=self.independent,
            zero_mean_U0=not np.any(self.U0_mean),
            zero_mean_F=not np.any(self.F_mean),
        )

    def shifted(self, U0_shift=0.0, F_shift=0.0) -> "RandomDataModel":
        """Same fluctuations with deterministic shifts added to the means."""
        return RandomDataModel(self.U0_mean + U0_shift, self.U0_cov, self.F_mean + F_shift,
                               self.F_cov, self.cross_cov)

    def scaled_forcing(self, c: float) -> "RandomDataModel":
        cross = None if self.cross_cov is None else c * self.cross_cov
        return RandomDataModel(self.U0_mean, self.U0_cov, c * self.F_mean,
                               c * c * self.F_cov, cross)


def _load_factor(op: SpectralOperator, dt: float) -> np.ndarray:
    """``int_0^dt exp(-alpha s) ds = (1 - exp(-alpha dt)) / alpha`` per mode."""
    return -np.expm1(-op.eigenvalues * dt) / op.eigenvalues


def _propagate(op: SpectralOperator, grid: TimeGrid, U0: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Exact solution at the nodes for piecewise-constant forcing.

    ``U0`` has shape ``(..., K)``, ``F`` shape ``(..., N, K)``; returns ``(..., K, N+1)``.
    """
    decay = np.exp(-op.eigenvalues * grid.dt)
    load = _load_factor(op, grid.dt)
    out = np.empty(U0.shape + (grid.N + 1,))
    U = U0
    out[..., 0] = U
    for i in range(grid.N):
        U = decay * U + F[..., i, :] * load
        out[..., i + 1] = U
    return out


def _draw(model: RandomDataModel, L: np.ndarray, z: np.ndarray):
    x = model.joint_mean() + np.einsum("...m,km->...k", z, L)
    K = model.K
    return x[..., :K], x[..., K:].reshape(x.shape[:-1] + (model.N, K))


def sample_random_solution(op: SpectralOperator, model: RandomDataModel, grid: TimeGrid,
                           rng: np.random.Generator) -> np.ndarray:
    """Draw (U0, F) and return the solution path, shape ``(K, N+1)``."""
    _check_model(op, model, grid)
    L = psd_sqrt(model.joint_covariance())
    U0, F = _draw(model, L, rng.standard_normal(L.shape[0]))
    return _propagate(op, grid, U0, F)


def _check_model(op, model, grid):
    if model.K != op.K or model.N != grid.N:
        raise ValidationError(f"model is for K={model.K}, N={model.N}; "
                              f"got K={op.K}, N={grid.N}")


def _draw_ensemble(op, model, grid, M, master_seed, threads):
    _check_model(op, model, grid)
    L = psd_sqrt(model.joint_covariance())
    width = L.shape[0]
    _check_capacity(M * op.K * (grid.N + 1) + M * width, "random-PDE ensemble")
    U0 = np.empty((M, op.K))
    F = np.empty((M, grid.N, op.K))

    def work(chunk):
        s, n = chunk
        z = SampleStreams(master_seed).normals(s, n, width)
        U0[s:s + n], F[s:s + n] = _draw(model, L, z)

    chunks = _chunks(M)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, chunks))
    else:
        for c in chunks:
            work(c)
    return U0, F


def simulate_random_solutions(op: SpectralOperator, model: RandomDataModel, grid: TimeGrid,
                              M: int, master_seed: int, threads: int = 1) -> PathEnsemble:
    """``M`` independent solution paths; sample ``j`` uses stream ``(master_seed, j)``."""
    U0, F = _draw_ensemble(op, model, grid, M, master_seed, threads)
    paths = _propagate(op, grid, U0, F)
    paths.setflags(write=False)
    return PathEnsemble(paths, grid, int(master_seed))


def _interval_loads(op: SpectralOperator, grid: TimeGrid) -> np.ndarray:
    """``G[i, k, a] = int over interval a, up to t_i, of exp(-alpha_k (t_i - s)) ds``."""
    N = grid.N
    load = _load_factor(op, grid.dt)
    lag = np.arange(N + 1)[:, None] - np.arange(N)[None, :] - 1  # steps from end of interval a to t_i
    active = lag >= 0
    G = np.exp(-op.eigenvalues[None, :, None] * grid.dt * np.where(active, lag, 0)[:, None, :])
    return G * load[None, :, None] * active[:, None, :]


def _propagate_moments(op, grid, m0, mF, provenance) -> MomentField:
    K, N = op.K, grid.N
    decay = op.decay(grid.nodes)  # (K, N+1)
    values = np.einsum("ki,lj,kl->klij", decay, decay, m0)
    G = _interval_loads(op, grid)
    values += np.einsum("ika,akbl,jlb->klij", G, mF.reshape(N, K, N, K), G)
    values = 0.5 * (values + values.transpose(1, 0, 3, 2))
    values.setflags(write=False)
    return MomentField(values, grid, provenance)


def solve_random_second_moment(op: SpectralOperator, data: SecondMomentData, grid: TimeGrid,
                               check_conditions: bool = True) -> MomentField:
    """Second moment of U from ``E[U0 (x) U0]`` and ``E[F (x) F]``.

    Requires U0 independent of F and ``E[U0] = 0`` or ``E[F] = 0``; without
    them the cross terms ``E[<F, v1> <U0, v2(0)>]`` do not vanish and the
    identity fails. ``check_conditions=False`` exists to demonstrate that.
    """
    if check_conditions:
        if not data.independent:
            raise ConditionError("second-moment identity requires F and U0 to be independent")
        if not (data.zero_mean_F or data.zero_mean_U0):
            raise ConditionError("second-moment identity requires E[F] = 0 or E[U0] = 0")
    check_psd(symmetrize(data.M2_U0, "E[U0 U0]"), "E[U0 U0]")
    check_psd(symmetrize(data.M2_F, "E[F F]"), "E[F F]")
    return _propagate_moments(op, grid, data.M2_U0, data.M2_F, "random-second-moment")


def solve_random_covariance(op: SpectralOperator, data: SecondMomentData, grid: TimeGrid,
                            check_conditions: bool = True) -> MomentField:
    """Covariance of U from ``Cov(U0)`` and ``Cov(F)``; needs independence only."""
    if check_conditions and not data.independent:
        raise ConditionError("covariance identity requires F and U0 to be independent")
    return _propagate_moments(op, grid, data.Cov_U0, data.Cov_F, "random-covariance")


@dataclass(frozen=True)
class CrossTermReport:
    """MC estimates of ``E[<F, v1> <U0, v2(0)>]`` and ``E[<U0, v1(0)> <F, v2>]``."""

    estimates: tuple
    std_errors: tuple
    analytic: tuple
    se_multiplier: float

    @property
    def passed(self) -> bool:
        return all(abs(e - a) <= self.se_multiplier * s
                   for e, a, s in zip(self.estimates, self.analytic, self.std_errors))


def _interval_weights(p: TimePolynomial, grid: TimeGrid) -> np.ndarray:
    return np.array([p.integral(a, b) for a, b in zip(grid.nodes[:-1], grid.nodes[1:])])


def cross_term_estimate(op: SpectralOperator, model: RandomDataModel, grid: TimeGrid, v1, v2,
                        M: int, master_seed: int, threads: int = 1,
                        se_multiplier: float = 4.0) -> CrossTermReport:
    """Estimate both cross terms and compare with ``E[U0 F^T]`` assembled by bilinearity."""
    (p1, k1), (p2, k2) = v1, v2
    p1.require_vanishing(grid.T)
    p2.require_vanishing(grid.T)
    U0, F = _draw_ensemble(op, model, grid, M, master_seed, threads)
    w1, w2 = _interval_weights(p1, grid), _interval_weights(p2, grid)
    a = (F[:, :, k1] @ w1) * U0[:, k2] * p2(0.0)
    b = U0[:, k1] * p1(0.0) * (F[:, :, k2] @ w2)
    E = model.cross_second_moment().reshape(model.K, model.N, model.K)
    exact = (float(E[k2, :, k1] @ w1 * p2(0.0)), float(E[k1, :, k2] @ w2 * p1(0.0)))
    ests, ses = [], []
    for x in (a, b):
        ests.append(float(np.mean(x)))
        ses.append(float(np.std(x, ddof=1) / np.sqrt(M)))
    return CrossTermReport(tuple(ests), tuple(ses), exact, se_multiplier)
