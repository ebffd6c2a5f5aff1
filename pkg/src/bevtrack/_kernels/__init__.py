"""Hot sampling kernels with backend selection at import.

The compiled Cython extension is used when it built successfully; otherwise
the numpy fallback takes over.  Set ``BEVTRACK_KERNELS=python`` to force the
fallback (e.g. for the benchmark, or to rule the extension out when
debugging).  Both backends are bit-identical by construction.
"""

import os

from . import fallback

_forced = os.environ.get("BEVTRACK_KERNELS", "").strip().lower()

if _forced in ("python", "numpy", "fallback"):
    _backend = fallback
else:
    try:
        from . import _core as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = fallback

BACKEND = _backend.NAME
bilinear_sample = _backend.bilinear_sample
depth_splat = _backend.depth_splat


def _backend_pair():
    """(compiled module or None, fallback module) regardless of selection."""
    try:
        from . import _core
    except ImportError:
        _core = None
    return _core, fallback


__all__ = ["BACKEND", "bilinear_sample", "depth_splat", "fallback"]
