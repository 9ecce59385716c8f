"""Per-path random streams.

Every Monte Carlo replica owns independent streams keyed by
``(seed, path_index, stream_tag)``.  Streams are Philox counter-based
generators, so an ensemble is bitwise reproducible no matter how the paths
are split across workers.
"""

import numpy as np

# stream tags; fBm and Brownian drivers must never share a stream
FBM = 0
BM = 1
INIT = 2
LIMIT_FBM = 10
LIMIT_BM = 11
FAST = 20
INVARIANT = 30
FK = 40


def stream(seed, path_index=0, tag=0):
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(tag)))
    return np.random.Generator(np.random.Philox(seq))


def streams(seed, path_indices, tag):
    return [stream(seed, i, tag) for i in path_indices]


def normals(gens, shape):
    """Stack one ``shape``-block of standard normals from each generator."""
    return np.stack([g.standard_normal(shape) for g in gens])
