# %% [markdown]
# # Random initial data and random forcing
#
# For `(d/dt + A) U = F` with random `U0` and `F` the second moment of `U`
# solves the same tensor equation, provided `U0` and `F` are independent and
# at least one of them has mean zero. The covariance needs independence only.
# This notebook shows the identities holding and then breaking.

# %%
import numpy as np

from momentfield import (
    ConditionError,
    RandomDataModel,
    SpectralOperator,
    TimeGrid,
    TimePolynomial,
    cross_term_estimate,
    kron_covariance,
    mc_covariance,
    mc_second_moment,
    simulate_random_solutions,
    solve_random_covariance,
    solve_random_second_moment,
)

op = SpectralOperator([1.0, 2.0])
grid = TimeGrid(1.0, 4)
forcing_cov = kron_covariance(np.eye(4), np.diag([1.0, 0.5]))  # white across intervals
model = RandomDataModel.build(op, grid, U0_cov=np.diag([0.5, 0.3]), F_cov=forcing_cov)


def max_z(est, ref):
    se = np.where(est.std_error > 0, est.std_error, np.inf)
    return float(np.max(np.abs(est.value - ref) / se))


# %%
exact = solve_random_second_moment(op, model.second_moment_data(), grid)
mc = mc_second_moment(simulate_random_solutions(op, model, grid, 100_000, master_seed=1))
print(f"independent, zero mean: max z = {max_z(mc, exact.values):.2f}")

# %% [markdown]
# With nonzero means the second-moment solver refuses, but the covariance
# identity still holds.

# %%
shifted = model.shifted(U0_shift=[0.4, -0.3], F_shift=0.7)
try:
    solve_random_second_moment(op, shifted.second_moment_data(), grid)
except ConditionError as err:
    print("refused:", err)
cov = solve_random_covariance(op, shifted.second_moment_data(), grid)
mc = mc_covariance(simulate_random_solutions(op, shifted, grid, 100_000, master_seed=2))
print(f"covariance with means: max z = {max_z(mc, cov.values):.2f}")

# %% [markdown]
# Now correlate `U0` mode 1 with the first forcing value (correlation 0.9)
# and force the solver past its checks. The cross terms it ignores are
# large compared with the Monte Carlo error.

# %%
cross = np.zeros((2, 8))
cross[0, 0] = 0.9 * np.sqrt(0.5 * 1.0)
correlated = RandomDataModel.build(op, grid, [0.5, 0.2], np.diag([0.5, 0.3]),
                                   np.full((4, 2), 0.5), forcing_cov, cross)
wrong = solve_random_second_moment(op, correlated.second_moment_data(), grid, check_conditions=False)
mc = mc_second_moment(simulate_random_solutions(op, correlated, grid, 100_000, master_seed=3))
print(f"correlated data: max z = {max_z(mc, wrong.values):.1f}")

v1 = (TimePolynomial.vanishing_at(1.0), 0)
v2 = (TimePolynomial.vanishing_at(1.0, 1), 1)
report = cross_term_estimate(op, correlated, grid, v1, v2, 100_000, master_seed=4)
for est, exact_value, se in zip(report.estimates, report.analytic, report.std_errors):
    print(f"cross term {est:+.4f} +- {se:.4f}  (analytic {exact_value:+.4f})")
