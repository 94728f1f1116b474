"""Kernel backend selection: numba JIT by default, pure numpy on request.

Set ``RCMSIM_NUMBA=0`` (or ``false``/``off``/``no``) before import to force the
pure-numpy fallback. The fallback runs the identical kernel source uncompiled,
so results are interchangeable; only throughput differs (see ``rcmsim bench``).
"""

import os

ENV_FLAG = "RCMSIM_NUMBA"

_requested = os.environ.get(ENV_FLAG, "1").strip().lower()
JIT_ENABLED = _requested not in ("0", "false", "off", "no")

if JIT_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        JIT_ENABLED = False

if JIT_ENABLED:

    def jit(fn):
        return _njit(cache=True)(fn)

else:

    def jit(fn):
        return fn


def backend_name() -> str:
    return "numba" if JIT_ENABLED else "numpy"
