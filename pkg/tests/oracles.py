"""Independent numerical oracles shared by the unit and acceptance tests."""

import numpy as np
from scipy.integrate import quad_vec


def duhamel_by_quadrature(alpha, q, u0, t, tp):
    """``S(t) u0 S(tp) + int_0^min(t,tp) S(t-s) q S(tp-s) ds`` by adaptive quadrature."""
    alpha = np.asarray(alpha, dtype=float)
    q = np.asarray(q, dtype=float)
    initial = np.exp(-alpha * t)[:, None] * u0 * np.exp(-alpha * tp)[None, :]
    m = min(t, tp)
    if m == 0:
        return initial

    def integrand(s):
        return np.exp(-alpha * (t - s))[:, None] * q * np.exp(-alpha * (tp - s))[None, :]

    val, _ = quad_vec(integrand, 0.0, m, epsabs=0.0, epsrel=1e-14, limit=2000)
    return initial + val


def random_psd(rng, K, scale=1.0):
    B = rng.standard_normal((K, K))
    return scale * (B @ B.T) / K
