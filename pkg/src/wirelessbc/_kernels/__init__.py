"""Hot loops: discrete-event queue replication and DCF slot simulation.

The compiled extension is used when it imports; otherwise, or when
``WIRELESSBC_PURE_PYTHON`` is set to a non-empty value other than ``0``, the
pure-Python fallback is selected. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels

_force_py = os.environ.get("WIRELESSBC_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure Python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

des_replication = _impl.des_replication
dcf_slots = _impl.dcf_slots

ARRIVAL, DROP, TIMER_EXPIRY, MINING_START, DEPARTURE, FORK = range(6)
EVENT_NAMES = ("arrival", "drop", "timer_expiry", "mining_start", "departure", "fork")


def get_backend(name):
    """Kernel module by name (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
