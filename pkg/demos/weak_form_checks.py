# %% [markdown]
# # Checking the closed form against the weak formulation
#
# The closed-form field is only trustworthy if it satisfies the equation it
# is supposed to solve. Here we test it three ways: the space-time weak
# identity, the strong-form equations along the time axes, and the a-priori
# norm bound.

# %%
import numpy as np

from momentfield import (
    TensorDuhamel,
    TimePolynomial,
    boundary_residual,
    delta_q_membership,
    diagonal_profile,
    make_dirichlet_laplacian,
    validate_covariance,
    variational_residuals,
    xnorm_squared,
)

op = make_dirichlet_laplacian(3)
q = validate_covariance([[1.0, 0.3, 0.0], [0.3, 0.5, 0.1], [0.0, 0.1, 0.25]], op)
u0 = np.diag([0.4, 0.3, 0.2])
u = TensorDuhamel(op, q.q_matrix, u0)
T = 1.0

# %% [markdown]
# Test functions are `(T - t) t^a` times an eigenvector. The left side is a
# double integral over `[0, T]^2` of a field with a kink on the diagonal,
# which the split quadrature handles to near machine precision.

# %%
tests = [(TimePolynomial.vanishing_at(T, a), k) for k in range(3) for a in range(4)]
reports = variational_residuals(u, T, tests)
worst = max(abs(r.residual) / r.scale for row in reports for r in row)
print(f"{len(tests) ** 2} test pairs, worst scaled residual {worst:.1e}")

r = reports[0][4]  # mode 0 against mode 1: only the off-diagonal noise couples them
print(f"modes {r.modes}: lhs {r.lhs:.12f}  rhs {r.rhs:.12f}")

# %% [markdown]
# Along `t' = 0` the field obeys `(d/dt + alpha_k) u = 0`. Central
# differences converge at second order.

# %%
b = boundary_residual(u, T)
print("residuals", [f"{x:.2e}" for x in b.residuals], "orders", [round(o, 3) for o in b.orders])
print("u(0, 0) reproduces u0 exactly:", b.origin_exact)

# %%
x = xnorm_squared(u, T)
print(f"norm {x.norm:.4f} <= bound {x.bound:.4f}: {x.holds}")

# %% [markdown]
# For an infinite noise profile `gamma_n = n^-p` the weak forcing is
# admissible only when `sum alpha_n gamma_n` converges, that is `p > 3`.

# %%
big = make_dirichlet_laplacian(32)
for p in (2.0, 4.0):
    rep = delta_q_membership(big, diagonal_profile(big, 1.0, p), profile=(1.0, p))
    sums = ", ".join(f"K={k}: {v:.2f}" for k, v in rep.partial_sums.items())
    print(f"p = {p}: admissible {rep.profile_admissible}; partial sums {sums}")
