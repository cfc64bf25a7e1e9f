"""Symmetric PSD helpers: validation with tolerances, eigendecomposition factors."""

from __future__ import annotations

import numpy as np

from .errors import PSDError, ValidationError

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-10


def symmetrize(raw, name: str = "matrix") -> np.ndarray:
    """Average ``raw`` with its transpose after checking it is symmetric within tolerance."""
    a = np.array(raw, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    gap = np.abs(a - a.T)
    allowed = SYMMETRY_RTOL * np.maximum(1.0, np.abs(a))
    if np.any(gap > allowed):
        n, m = np.unravel_index(np.argmax(gap - allowed), gap.shape)
        raise ValidationError(
            f"{name} is not symmetric: entry ({n}, {m}) = {a[n, m]!r} "
            f"but ({m}, {n}) = {a[m, n]!r}"
        )
    return 0.5 * (a + a.T)


def min_eigen_ratio(a: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    lam = np.linalg.eigvalsh(a)
    return float(lam[0]), float(lam[-1])


def is_psd(a: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    lo, hi = min_eigen_ratio(0.5 * (a + a.T))
    return lo >= -rtol * max(hi, 0.0)


def check_psd(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Raise :class:`PSDError` if ``a`` has an eigenvalue below ``-1e-10 * lambda_max``."""
    lo, hi = min_eigen_ratio(a)
    if lo < -PSD_RTOL * max(hi, 0.0):
        raise PSDError(
            f"{name} is not positive semidefinite: smallest eigenvalue {lo:.6g} "
            f"(largest {hi:.6g})"
        )
    return a


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root ``U diag(sqrt(max(lam, 0))) U^T`` of a PSD matrix."""
    lam, U = np.linalg.eigh(a)
    return (U * np.sqrt(np.clip(lam, 0.0, None))) @ U.T
