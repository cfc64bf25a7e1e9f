"""Q-Wiener noise in the eigenbasis of A.

The covariance Q is held as the K x K matrix ``q[n, m] = <Q e_n, e_m>``. The
co-diagonal case (Q and A share eigenvectors) is simply a diagonal matrix of the
eigenvalues ``gamma_n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError
from .linalg import check_psd, psd_sqrt, symmetrize
from .spectral import SpectralOperator, as_coefficients

__all__ = [
    "NoiseCovariance",
    "NoiseFactor",
    "validate_covariance",
    "diagonal_profile",
    "factor",
    "convolution_increment_covariance",
    "hs_norm_squared",
    "sample_increments",
]


@dataclass(frozen=True)
class NoiseCovariance:
    q_matrix: np.ndarray
    trace: float
    trace_AQ: float

    @property
    def K(self) -> int:
        return self.q_matrix.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.q_matrix == np.diag(np.diag(self.q_matrix))))


@dataclass(frozen=True)
class NoiseFactor:
    """``L`` with ``L @ L.T == cov.q_matrix`` up to PSD clipping."""

    L: np.ndarray
    cov: NoiseCovariance


def validate_covariance(raw, op: SpectralOperator) -> NoiseCovariance:
    """Symmetrize and check a covariance matrix, computing Tr(Q) and Tr(AQ).

    Raises
    ------
    ValidationError
        Wrong shape or asymmetry beyond ``1e-12 * max(1, |q_nm|)``.
    PSDError
        Smallest eigenvalue below ``-1e-10`` times the largest.
    """
    q = symmetrize(raw, "noise covariance")
    if q.shape[0] != op.K:
        raise ValidationError(f"noise covariance must be {op.K}x{op.K}, got {q.shape}")
    check_psd(q, "noise covariance")
    diag = np.diag(q)
    q.setflags(write=False)
    return NoiseCovariance(q, float(diag.sum()), float(op.eigenvalues @ diag))


def diagonal_profile(op: SpectralOperator, c: float, p: float) -> NoiseCovariance:
    """Co-diagonal covariance with eigenvalues ``gamma_n = c * n^(-p)``, n = 1..K."""
    if c < 0:
        raise DomainError(f"profile amplitude must be nonnegative, got {c!r}")
    n = np.arange(1, op.K + 1, dtype=float)
    return validate_covariance(np.diag(c * n ** (-float(p))), op)


def factor(cov: NoiseCovariance) -> NoiseFactor:
    L = psd_sqrt(cov.q_matrix)
    L.setflags(write=False)
    return NoiseFactor(L, cov)


def convolution_increment_covariance(
    op: SpectralOperator, cov: NoiseCovariance, dt: float
) -> np.ndarray:
    """Covariance of ``int_0^dt S(dt - s) dW(s)`` in the eigenbasis.

    Entry ``(k, l)`` is ``q_kl * (1 - exp(-(alpha_k + alpha_l) dt)) / (alpha_k + alpha_l)``.
    """
    if not dt > 0:
        raise DomainError(f"step must be positive, got {dt!r}")
    s = np.add.outer(op.eigenvalues, op.eigenvalues)
    return cov.q_matrix * (-np.expm1(-s * dt) / s)


def hs_norm_squared(op: SpectralOperator, cov: NoiseCovariance, Phi_diag) -> float:
    """``||Phi||^2`` in L_HS(Q^{1/2}H; H) for an operator diagonal in the eigenbasis.

    Equals ``Tr(Phi Q Phi^T) = sum_k phi_k^2 q_kk``. Kernel directions of Q
    contribute nothing, matching the pseudo-inverse convention.
    """
    phi = as_coefficients(op, Phi_diag)
    return float(np.sum(phi * phi * np.diag(cov.q_matrix)))


def sample_increments(noise_factor: NoiseFactor, dt: float, rng: np.random.Generator,
                      size=None) -> np.ndarray:
    """Draw ``W(t + dt) - W(t) = sqrt(dt) L xi`` with ``xi`` standard normal.

    ``size`` prepends sample dimensions; the mode axis is last.
    """
    if not dt > 0:
        raise DomainError(f"step must be positive, got {dt!r}")
    K = noise_factor.L.shape[0]
    shape = (K,) if size is None else tuple(np.atleast_1d(size)) + (K,)
    xi = rng.standard_normal(shape)
    return np.sqrt(dt) * (xi @ noise_factor.L.T)
