"""Kernel backend selection.

Hot numeric loops (cell walking, compositing, face clipping) are compiled
with numba when available.  Setting ``SEMFOAM_NUMBA=0`` selects the pure
numpy/python fallback, which is bitwise-equivalent but much slower; it is
used for debugging and by the backend benchmark.

``SEMFOAM_THREADS`` caps the numba thread pool (0 = auto).
"""

from __future__ import annotations

import os
import warnings

# old TBB builds emit a harmless threading-layer warning on import
warnings.filterwarnings("ignore", message=".*TBB.*", module="numba.*")


def _env_truthy(name: str, default: str) -> bool:
    return os.environ.get(name, default).strip().lower() not in ("0", "false", "no", "off")


NUMBA_ENABLED = _env_truthy("SEMFOAM_NUMBA", "1")

if NUMBA_ENABLED:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False


def configure_threads() -> int:
    """Apply the SEMFOAM_THREADS cap.  Returns the resulting thread count."""
    n = int(os.environ.get("SEMFOAM_THREADS", "0"))
    if not NUMBA_ENABLED:
        return 1
    import numba

    if n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()


def jit(*args, **kwargs):
    """``numba.njit`` when the numba backend is active, identity otherwise."""
    if NUMBA_ENABLED:
        import numba

        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def wrap(func):
        return func

    return wrap
