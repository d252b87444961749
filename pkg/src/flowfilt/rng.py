"""Counter-based Gaussian noise streams.

Every draw is a pure function of ``(seed, purpose, counter, particle id)``:
a Philox generator is keyed by the seed and the counter tuple, and particle
``i`` reads row ``i`` of the resulting block.  Results therefore do not
depend on how work is split across threads.
"""

import numpy as np

PRIOR = 0
FLOW = 1
PROCESS = 2


class NoiseStream:
    def __init__(self, seed, purpose, *prefix):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.key = (int(purpose),) + tuple(int(p) for p in prefix)

    def generator(self, counter):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + (int(counter),))
        return np.random.Generator(np.random.Philox(ss))

    def normals(self, counter, ids, m):
        """Standard normals of shape ``(len(ids), m)`` for the given particle ids."""
        ids = np.asarray(ids, dtype=np.int64)
        if m == 0 or ids.size == 0:
            return np.zeros((ids.size, m))
        rows = int(ids.max()) + 1
        block = self.generator(counter).standard_normal((rows, m))
        if rows == ids.size and np.array_equal(ids, np.arange(rows)):
            return block
        return block[ids]
