"""Pure-numpy nearest-neighbor kernel, bit-compatible with the compiled lane.

The pairwise squared distance is evaluated as ``(dx*dx + dy*dy) + dz*dz``
and the minimum is taken with first-occurrence tie-breaking, matching the
compiled kernel operation for operation. Queries are processed in blocks
to bound the temporary (block, m, 3) buffer.
"""

import numpy as np

_BLOCK = 512


def nn_sqdist(query, target):
    n = query.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sqd = np.empty(n, dtype=np.float64)
    for start in range(0, n, _BLOCK):
        q = query[start:start + _BLOCK]
        diff = q[:, None, :] - target[None, :, :]
        sq = diff * diff
        d = (sq[..., 0] + sq[..., 1]) + sq[..., 2]
        j = np.argmin(d, axis=1)
        rows = np.arange(q.shape[0])
        idx[start:start + _BLOCK] = j
        sqd[start:start + _BLOCK] = d[rows, j]
    return idx, sqd
