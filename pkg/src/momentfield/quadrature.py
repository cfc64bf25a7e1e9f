"""Quadrature on [0, T]^2 for integrands with a derivative kink on the diagonal.

The square is split along ``t = t'`` into two triangles. Each triangle is
pulled back to the unit square by a collapsed (Duffy) map whose first
coordinate is the distance to the diagonal, so the kink sits on a cell edge
and the integrand is analytic inside every cell. Cells are graded
geometrically towards both the diagonal and the time axes, where exponential
layers of width ``1/alpha`` live, and carry a tensor Gauss-Legendre rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import QuadratureError

DEFAULT_ORDER = 16


@lru_cache(maxsize=None)
def _gauss_legendre_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def graded_breakpoints(rate: float, base_cells: int = 2) -> np.ndarray:
    """Breakpoints in [0, 1]: ``base_cells`` uniform cells plus points ``2^-j`` down to ``1/rate``."""
    pts = set(np.linspace(0.0, 1.0, base_cells + 1).tolist())
    h = 0.5
    while h * rate > 1.0:
        pts.add(h)
        h *= 0.5
    pts.add(min(h, 1.0))
    return np.array(sorted(pts))


def composite_rule(breaks: np.ndarray, level: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on [0, 1], each cell bisected ``level`` times."""
    if level:
        fine = [np.linspace(a, b, 2**level + 1)[:-1] for a, b in zip(breaks[:-1], breaks[1:])]
        breaks = np.append(np.concatenate(fine), breaks[-1])
    x, w = _gauss_legendre_unit(order)
    h = np.diff(breaks)
    nodes = (breaks[:-1, None] + h[:, None] * x).ravel()
    weights = (h[:, None] * w).ravel()
    return nodes, weights


@dataclass(frozen=True)
class DiagonalSplitRule:
    """Nodes ``(t, tp)`` and weights ``w`` covering ``[0, T]^2``.

    ``lower`` selects the nodes with ``tp <= t``; the remaining nodes lie in the
    upper triangle.
    """

    t: np.ndarray
    tp: np.ndarray
    w: np.ndarray
    lower: np.ndarray
    level: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract the trailing node axis of ``values`` against the weights."""
        return values @ self.w


def diagonal_split_rule(T: float, rate: float, level: int = 0,
                        order: int = DEFAULT_ORDER) -> DiagonalSplitRule:
    """Build the rule for exponential rates up to ``rate`` (in 1/time)."""
    breaks = graded_breakpoints(max(rate * T, 1.0))
    x, wx = composite_rule(breaks, level, order)
    a, b = np.meshgrid(x, x, indexing="ij")
    wa, wb = np.meshgrid(wx, wx, indexing="ij")
    a, b = a.ravel(), b.ravel()
    # distance to diagonal r = T a, position along it s = T (1 - a) b
    r = T * a
    s = T * (1.0 - a) * b
    jac = (wa * wb).ravel() * T * T * (1.0 - a)
    t = np.concatenate([s + r, s])
    tp = np.concatenate([s, s + r])
    w = np.concatenate([jac, jac])
    lower = np.zeros(t.size, dtype=bool)
    lower[: s.size] = True
    return DiagonalSplitRule(t, tp, w, lower, level)


def integrate_kinked(integral, T: float, rate: float, rtol: float = 1e-10,
                     max_level: int = 3, order: int = DEFAULT_ORDER):
    """Evaluate ``integral(rule)`` on successively bisected rules until it settles.

    ``integral`` maps a :class:`DiagonalSplitRule` to an array of integrals.
    Successive levels are compared (one Richardson step); the finer value is
    accepted once every component changed by at most ``rtol * max(1, |value|)``.

    Returns
    -------
    value : ndarray
    error_estimate : ndarray
        ``|I_fine - I_coarse|`` per component.
    level : int
        Refinement level of the accepted value.
    """
    coarse = np.asarray(integral(diagonal_split_rule(T, rate, 0, order)))
    for level in range(1, max_level + 1):
        fine = np.asarray(integral(diagonal_split_rule(T, rate, level, order)))
        err = np.abs(fine - coarse)
        if np.all(err <= rtol * np.maximum(1.0, np.abs(fine))):
            return fine, err, level
        coarse = fine
    raise QuadratureError(
        f"kinked quadrature did not reach rtol={rtol:g} within {max_level} refinements "
        f"(max change {np.max(err):.3g})"
    )
