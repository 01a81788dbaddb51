"""Hot inner loops, numba-compiled when available.

Set ``ARCHGEN_DISABLE_NUMBA=1`` to force the pure-numpy path. Both
backends produce bit-identical results; the numba one is faster on the
segment sums that dominate message passing.
"""
import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("ARCHGEN_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba as _impl  # noqa: F811

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is optional
        _impl = _numpy

segment_sum = _impl.segment_sum
closure = _impl.closure
undirected_apsp = _impl.undirected_apsp
triangles = _impl.triangles
io_paths = _impl.io_paths

__all__ = ["BACKEND", "segment_sum", "closure", "undirected_apsp", "triangles", "io_paths"]
