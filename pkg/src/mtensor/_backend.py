"""Kernel backend selection: numba-jitted loops or pure numpy.

The environment variable ``MTENSOR_NUMBA`` controls the choice:

* unset or ``1`` -- use numba kernels when numba is importable,
* ``0`` -- force the pure-numpy fallback path.

Both paths compute identical results; see ``benchmarks/bench_kernels.py``
for a speed comparison.
"""
import os

_flag = os.environ.get("MTENSOR_NUMBA", "1").strip().lower()

if _flag in ("0", "false", "no", "off"):
    HAVE_NUMBA = False
    USE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False
    USE_NUMBA = HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
