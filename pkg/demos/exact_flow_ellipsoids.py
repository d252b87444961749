"""
The deterministic flow keeps V constant
=======================================

With Q = 0 every particle keeps its standardized distance from the mode:
V = y' M(lam) y with y = grad log p stays at its starting value.  Bounded
weights M2 <= M(lam) <= M1 then trap y between two fixed ellipsoids.
"""

import numpy as np

from flowfilt import V1, V2, Ensemble, Homotopy, IntegratorConfig, MemorySink, flow_to_posterior

hom = Homotopy.gaussian([0.0, 0.0], [[1.0, 0.4], [0.4, 2.0]], [[1.0, 0.0]], [[0.3]], [1.5])

x0 = np.array([[2.0, -1.0], [-0.5, 3.0], [0.1, 0.1]])
sink = MemorySink()
cfg = IntegratorConfig(steps=2000, scheme="rk4_deterministic", record_every=100)
flow_to_posterior(Ensemble(x0), hom, 0.0, cfg, sink=sink)

# %%
start = V1(hom, x0, 0.0)
print(" lam    " + "   ".join(f"V(particle {i})" for i in range(len(x0))))
for b in sink.batches[::4]:
    print(f"{b.lam:4.2f}  " + "  ".join(f"{v:14.10f}" for v in b.V))

# %%
# Relative drift over the whole path, and the ellipsoid sandwich.
drift = max(np.abs(b.V - start).max() for b in sink.batches) / start.min()
inner = all(np.all(V1(hom, b.X, b.lam) >= start - 1e-9) for b in sink.batches)
outer = all(np.all(V2(hom, b.X, b.lam) <= start + 1e-9) for b in sink.batches)
print(f"max relative V drift {drift:.1e}; V1 >= V1(y0): {inner}; V2 <= V1(y0): {outer}")
end = sink.batches[-1]
print("V at lam=1 equals V2 there:", np.allclose(end.V, V2(hom, end.X, 1.0), rtol=1e-14))
