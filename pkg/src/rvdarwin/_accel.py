"""Switch between numba-compiled kernels and the pure-numpy path.

Set ``RVD_NUMBA=0`` before import to force the numpy fallback.  Thread count
comes from ``RVD_THREADS`` unless a caller sets it explicitly.
"""
import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


# the system TBB is too old for numba; pick a layer that needs no extra library
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")


def _want_numba():
    flag = os.environ.get("RVD_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _want_numba()

if USE_NUMBA:
    import numba
    from numba import njit, prange
else:
    numba = None
    njit = _noop_jit
    prange = range


def backend():
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n=None):
    """Set worker threads; ``None`` reads ``RVD_THREADS`` or keeps the default."""
    if n is None:
        env = os.environ.get("RVD_THREADS")
        n = int(env) if env else None
    if n is None or not USE_NUMBA:
        return n
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
