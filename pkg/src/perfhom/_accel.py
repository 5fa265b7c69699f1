"""Backend switch for the numeric kernels.

Hot loops are written once and compiled with ``numba.njit`` when numba is
importable and ``PERFHOM_NUMBA`` is not set to ``0``/``false``/``off``.
Otherwise every kernel module falls back to its vectorised numpy twin.
The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("PERFHOM_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and _FLAG not in {"0", "false", "off", "no"}


def njit(func):
    """Compile ``func`` in nopython mode with on-disk caching."""
    if _numba is None:  # pragma: no cover
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def njit_fast(func):
    """Like :func:`njit` but lets LLVM reassociate sums so loops vectorise.

    The summation order is still fixed by the compiled code, so results
    stay reproducible run to run on one machine.
    """
    if _numba is None:  # pragma: no cover
        return func
    return _numba.njit(cache=True, nogil=True, fastmath={"reassoc", "contract", "nsz"})(func)
