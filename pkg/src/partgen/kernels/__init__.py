"""Hot kernels: compiled Cython lane with a pure-numpy fallback.

The compiled extension is preferred when importable; set the environment
variable ``PARTGEN_NO_NATIVE=1`` to force the fallback (used by the lane
benchmark and the bit-equality tests). Both lanes return bit-identical
arrays, and every reduction over kernel output happens in shared numpy
code, so the lane choice never changes downstream values.
"""

import os

import numpy as np

from ..errors import ValidationError
from . import _fallback

if os.environ.get("PARTGEN_NO_NATIVE"):
    _impl = _fallback
    HAVE_NATIVE = False
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        HAVE_NATIVE = True
    except ImportError:
        _impl = _fallback
        HAVE_NATIVE = False

ACTIVE_LANE = "native" if HAVE_NATIVE else "fallback"


def _prep(arr, name):
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (n, 3), got {arr.shape}")
    if a.shape[0] == 0:
        raise ValidationError(f"{name} is empty")
    return a


def nn_sqdist(query, target):
    """Nearest target point for each query point.

    Returns ``(indices, squared_distances)`` with ties broken toward the
    lowest target index.
    """
    q = _prep(query, "query")
    t = _prep(target, "target")
    return _impl.nn_sqdist(q, t)


def nn_sqdist_fallback(query, target):
    """Always-numpy lane, exposed for lane-equality checks and benchmarks."""
    q = _prep(query, "query")
    t = _prep(target, "target")
    return _fallback.nn_sqdist(q, t)
