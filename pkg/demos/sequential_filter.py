"""
A flow filter over several measurements
=======================================

A random walk x_k = x_{k-1} + w_k is observed in unit noise.  Each update
flows the predicted particles to the new posterior; the Kalman filter gives
the exact answer to compare against.
"""

import numpy as np

from flowfilt import (
    IntegratorConfig,
    LinearDynamics,
    MeasurementModel,
    PosteriorMoments,
    kalman_filter,
    sequential_flow_filter,
)

init = PosteriorMoments([0.0], [[1.0]])
dyn = LinearDynamics(F=[[1.0]], W=[[0.1]])
mm = MeasurementModel(H=[[1.0]], R=[[1.0]])
zs = [[0.8], [1.3], [0.4], [1.1], [1.7]]

N = 50_000
flow = sequential_flow_filter(init, dyn, mm, zs, IntegratorConfig(steps=100, seed=0), N, diffusion=0.5)
exact = kalman_filter(init, dyn, mm, zs)

print(" k    z     flow mean  kalman mean   flow var  kalman var")
for k, ((est, _), kf) in enumerate(zip(flow, exact)):
    print(
        f"{k:2d}  {zs[k][0]:4.1f}   {est.mean[0]:9.4f}  {kf.mean[0]:11.4f}  "
        f"{est.covariance[0, 0]:9.4f}  {kf.covariance[0, 0]:10.4f}"
    )

# %%
# Mean errors in units of the Monte Carlo standard error.
z = [(est.mean[0] - kf.mean[0]) / np.sqrt(kf.covariance[0, 0] / N) for (est, _), kf in zip(flow, exact)]
print("standardized mean errors:", np.round(z, 2))
