"""Diagonal representation of the operator A, its semigroup and Gelfand-triple norms.

Everything lives in the eigenbasis of A: an element of H is the vector of its
coordinates ``<v, e_k>`` for ``k = 0..K-1`` and A acts by multiplication with
the eigenvalues. Eigenfunctions are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError

__all__ = [
    "SpectralOperator",
    "TimeGrid",
    "make_dirichlet_laplacian",
    "semigroup_apply",
    "norm",
    "smoothing_integral",
    "as_coefficients",
]

_NORM_SPACES = ("H", "V", "Vstar")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralOperator:
    """Self-adjoint positive definite operator given by its first K eigenvalues.

    Parameters
    ----------
    eigenvalues : array_like
        Nondecreasing positive eigenvalues ``alpha_1 <= ... <= alpha_K``.
    """

    eigenvalues: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.eigenvalues, dtype=float)
        if alpha.ndim != 1 or alpha.size < 1:
            raise DomainError("eigenvalues must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise DomainError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(alpha) < 0):
            raise DomainError("eigenvalues must be in nondecreasing order")
        object.__setattr__(self, "eigenvalues", _frozen(alpha))

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    def decay(self, t) -> np.ndarray:
        """Diagonal of S(t), shape ``(K,) + shape(t)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("semigroup time must be nonnegative")
        return np.exp(-np.multiply.outer(self.eigenvalues, t))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i*T/N`` on ``[0, T]``."""

    T: float
    N: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise DomainError(f"horizon T must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"step count N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))
        nodes = np.arange(self.N + 1) * (self.T / self.N)
        nodes[-1] = self.T
        object.__setattr__(self, "nodes", _frozen(nodes))

    @property
    def dt(self) -> float:
        return self.T / self.N


def make_dirichlet_laplacian(K: int) -> SpectralOperator:
    """Negative Dirichlet Laplacian on the unit interval, ``alpha_k = (k*pi)^2``."""
    if int(K) != K or K < 1:
        raise DomainError(f"mode count K must be a positive integer, got {K!r}")
    k = np.arange(1, int(K) + 1, dtype=float)
    return SpectralOperator((k * np.pi) ** 2)


def as_coefficients(op: SpectralOperator, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (op.K,):
        raise ValidationError(f"coefficient vector must have shape ({op.K},), got {v.shape}")
    return v


def semigroup_apply(op: SpectralOperator, t: float, v) -> np.ndarray:
    """Return ``S(t) v``, i.e. ``exp(-alpha_k t) * v_k``."""
    if t < 0:
        raise DomainError(f"semigroup time must be nonnegative, got {t!r}")
    v = as_coefficients(op, v)
    return np.exp(-op.eigenvalues * t) * v


def norm(op: SpectralOperator, space: str, v) -> float:
    """Norm of ``v`` in H, V = D(A^{1/2}) or V* (weights 1, alpha_k, 1/alpha_k)."""
    v = as_coefficients(op, v)
    if space == "H":
        w = np.ones_like(op.eigenvalues)
    elif space == "V":
        w = op.eigenvalues
    elif space == "Vstar":
        w = 1.0 / op.eigenvalues
    else:
        raise ValueError(f"space must be one of {_NORM_SPACES}, got {space!r}")
    return float(np.sqrt(np.sum(w * v * v)))


def smoothing_integral(op: SpectralOperator, T: float, v) -> float:
    """Exact value of ``int_0^T ||A^{1/2} S(t) v||_H^2 dt``.

    Per mode the integrand is ``alpha_k exp(-2 alpha_k t) v_k^2``, whose integral is
    ``v_k^2 (1 - exp(-2 alpha_k T)) / 2``. The result never exceeds ``||v||_H^2 / 2``.
    """
    if T < 0:
        raise DomainError(f"horizon must be nonnegative, got {T!r}")
    v = as_coefficients(op, v)
    value = float(np.sum(v * v * -np.expm1(-2.0 * op.eigenvalues * T)) / 2.0)
    assert value <= 0.5 * float(np.sum(v * v)) * (1 + 1e-15)
    return value
