"""
Where does the flow push particles?
===================================

LV is the expected rate of change of V.  For constant Q it is negative far
from the mode (region S1), positive near it (S2), and depends on lam in
between (S3).  The noisy flow therefore neither collapses particles onto the
mode nor lets them drift away.
"""

import numpy as np

from flowfilt import (
    Homotopy,
    IntegratorConfig,
    MemorySink,
    classify_partition,
    flow_to_posterior,
    gamma,
    sample_prior,
)
from flowfilt.lyapunov import partition_thresholds

hom = Homotopy.gaussian([0.0], [[1.0]], [[1.0]], [[1.0]], [1.0])
Q = np.eye(1)
lo, hi = partition_thresholds(hom, Q)
print(f"S2 below y'Qy = {lo:g}, S1 above y'Qy = {hi:g}")
for y in (0.5, 1.2, 2.0):
    print(f"  y = {y}: {classify_partition(hom, [y], Q)}")

# %%
# gamma(lam) is the x-independent part of L log p; its sign is not fixed.
lams = np.linspace(0, 1, 6)
print("gamma:", np.round([gamma(hom, lam, Q) for lam in lams], 4))

# %%
sink = MemorySink()
cfg = IntegratorConfig(steps=500, seed=3, record_every=100)
flow_to_posterior(sample_prior(hom, 20_000, 3), hom, Q, cfg, sink=sink)
print(" lam   mean V   mean LV    S1     S2     S3")
for b in sink.batches:
    counts = [np.mean(b.partition == s) for s in ("S1", "S2", "S3")]
    print(f"{b.lam:4.2f}  {b.V.mean():6.3f}  {b.LV.mean():7.3f}  " + "  ".join(f"{c:5.3f}" for c in counts))
