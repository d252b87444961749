"""
Mean and covariance along the flow
==================================

For a linear drift the first two moments obey closed ODEs.  Integrating them
from the prior reproduces the tempered posterior p(x, lam) at every lam,
whatever diffusion is chosen.
"""

import numpy as np

from flowfilt import DiffusionSchedule, Homotopy, posterior_moments, propagate_moments
from flowfilt.moments import analytic_trajectory

# only the first coordinate is observed, so the likelihood curvature is singular
hom = Homotopy.gaussian([0.0, 0.0], np.eye(2), [[1.0, 0.0]], [[1.0]], [1.0])

schedules = {
    "Q = 0": 0.0,
    "Q = I": np.eye(2),
    "Q ramps 2I -> 0": DiffusionSchedule.knots([0.0, 1.0], [2 * np.eye(2), np.zeros((2, 2))]),
}
for label, Q in schedules.items():
    traj = propagate_moments(hom, Q, steps=2000)
    exact = analytic_trajectory(hom, traj.lambdas)
    err = max(np.abs(traj.means - exact.means).max(), np.abs(traj.covariances - exact.covariances).max())
    final = traj.final
    print(f"{label:<16} final mean {np.round(final.mean, 10)}  diag cov {np.round(np.diag(final.covariance), 10)}  max err {err:.1e}")

# %%
print("posterior:", posterior_moments(hom, 1.0))
