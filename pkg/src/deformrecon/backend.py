"""Numba/numpy backend selection for the hot kernels.

The environment variable ``DEFORMRECON_BACKEND`` picks the path:

* ``auto``  (default) - numba if importable, else the pure-numpy fallback
* ``numba`` - require numba, raise if it cannot be imported
* ``numpy`` - force the pure-numpy fallback

Both paths compute identical results (same operation order, no fastmath);
``deformrecon.bench`` compares their speed.
"""

import os

_CHOICE = os.environ.get("DEFORMRECON_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"DEFORMRECON_BACKEND must be auto, numba or numpy, got {_CHOICE!r}"
    )

numba = None
if _CHOICE in ("auto", "numba"):
    try:
        import numba  # type: ignore
    except ImportError:
        if _CHOICE == "numba":
            raise
        numba = None

USE_NUMBA = numba is not None


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when the numba path is active, identity otherwise.

    Kernels decorated with this are only called on the numba path; the
    numpy path dispatches to separate vectorized implementations.
    """
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn
