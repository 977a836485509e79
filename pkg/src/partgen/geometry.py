"""Point-cloud primitives shared by every other module.

A point cloud is a plain ``(n, 3)`` float64 array; a point is a length-3
vector. All operations here are pure functions on immutable inputs and
deterministic, with nearest-neighbor ties resolved to the lowest index.
"""

import numpy as np

from . import kernels
from .errors import ValidationError


def as_cloud(points, name="cloud"):
    """Validate and return a float64 ``(n, 3)`` view/copy of ``points``."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValidationError(f"{name} must contain at least one point")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite coordinates")
    return arr


def as_point(point, name="point"):
    arr = np.asarray(point, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite coordinates")
    return arr


def normalize_to_unit_cube(cloud):
    """Uniformly rescale a cloud so its bounding box fits [-1, 1]^3.

    The transform is ``out = scale * (in + offset)`` with a single scale
    for all axes, so at least one axis touches +-1. Returns
    ``(normalized_cloud, scale, offset)``; the inverse transform is
    ``in = out / scale - offset``.

    Raises on a degenerate cloud (all points identical).
    """
    pts = as_cloud(cloud)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    half = (hi - lo) / 2.0
    extent = half.max()
    if extent == 0.0:
        raise ValidationError("degenerate cloud: zero extent on every axis")
    offset = -(lo + hi) / 2.0
    scale = 1.0 / extent
    return scale * (pts + offset), scale, offset


def denormalize(cloud, scale, offset):
    """Inverse of :func:`normalize_to_unit_cube`."""
    return as_cloud(cloud) / scale - as_point(offset, "offset")


def nearest_neighbor(query, target):
    """Index and squared distance of the target point nearest to ``query``.

    Ties resolve to the lowest index. Uses the compiled kernel lane when
    available; :func:`nearest_neighbor_scan` is the reference oracle.
    """
    q = as_point(query, "query")
    t = as_cloud(target, "target")
    idx, sqd = kernels.nn_sqdist(q[None, :], t)
    return int(idx[0]), float(sqd[0])


def nearest_neighbor_scan(query, target):
    """Plain-Python exhaustive scan; the test oracle for nearest_neighbor."""
    q = as_point(query, "query")
    t = as_cloud(target, "target")
    best_i = 0
    best_d = None
    for i in range(t.shape[0]):
        dx = q[0] - t[i, 0]
        dy = q[1] - t[i, 1]
        dz = q[2] - t[i, 2]
        d = (dx * dx + dy * dy) + dz * dz
        if best_d is None or d < best_d:
            best_d = d
            best_i = i
    return best_i, best_d


def centroid(cloud):
    return as_cloud(cloud).mean(axis=0)


def rms_radius(cloud):
    """Root-mean-square distance of the points from their centroid."""
    pts = as_cloud(cloud)
    c = pts.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1))))
