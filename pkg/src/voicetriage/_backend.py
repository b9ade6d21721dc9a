"""Hot-kernel backend selection.

Set VOICETRIAGE_BACKEND=numpy to force the pure-numpy fallback kernels, or
=numba to require the jitted ones (ImportError if numba is missing). Unset,
numba is used when importable.
"""

import os

_requested = os.environ.get("VOICETRIAGE_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"VOICETRIAGE_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    USE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        USE_NUMBA = False


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
