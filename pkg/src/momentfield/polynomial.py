"""Polynomial test functions in time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DomainError, ValidationError

MAX_DEGREE = 6


@dataclass(frozen=True)
class TimePolynomial:
    """Real polynomial ``p(t) = sum_j coef[j] t^j`` of degree at most 6."""

    coef: tuple

    def __post_init__(self):
        c = np.trim_zeros(np.asarray(self.coef, dtype=float), "b")
        if c.size == 0:
            c = np.zeros(1)
        if c.size - 1 > MAX_DEGREE:
            raise ValidationError(f"degree {c.size - 1} exceeds {MAX_DEGREE}")
        object.__setattr__(self, "coef", tuple(float(x) for x in c))

    @classmethod
    def vanishing_at(cls, T: float, power: int = 0) -> "TimePolynomial":
        """``(T - t) * t**power``, the standard basis of test functions with p(T) = 0."""
        p = Polynomial([T, -1.0]) * Polynomial([0.0] * power + [1.0])
        return cls(tuple(p.coef))

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coef)

    @property
    def degree(self) -> int:
        return len(self.coef) - 1

    def __call__(self, t):
        return self.poly(t)

    def derivative(self) -> "TimePolynomial":
        return TimePolynomial(tuple(self.poly.deriv().coef))

    def integral(self, a: float, b: float) -> float:
        P = self.poly.integ()
        return float(P(b) - P(a))

    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coef)

    def require_vanishing(self, T: float) -> None:
        """Reject test functions with ``p(T) != 0`` (beyond rounding of the coefficients)."""
        scale = max(1.0, float(np.sum(np.abs(self.coef) * max(1.0, T) ** np.arange(len(self.coef)))))
        if abs(self(T)) > 1e-12 * scale:
            raise DomainError(f"test function must vanish at T={T}, got p(T)={self(T)!r}")


def product_integral(p1: TimePolynomial, p2: TimePolynomial, a: float, b: float) -> float:
    """Exact ``int_a^b p1(s) p2(s) ds`` via the antiderivative of the product."""
    P = (p1.poly * p2.poly).integ()
    return float(P(b) - P(a))


def weak_integrand(p: TimePolynomial, alpha: float) -> TimePolynomial:
    """``-p'(t) + alpha p(t)``, the time profile of ``(-d/dt + A) (p e_k)``."""
    return TimePolynomial(tuple((-p.poly.deriv() + alpha * p.poly).coef))
