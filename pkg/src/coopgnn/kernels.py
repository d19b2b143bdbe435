"""Backend selection for the aggregation kernels.

The compiled extension is used when it imports; otherwise the numpy/scipy
fallback is used. Set ``COOPGNN_KERNELS=python`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

BACKENDS: dict[str, ModuleType] = {"python": _kernels_py}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

_active: ModuleType = _kernels_py
if _compiled is not None and os.environ.get("COOPGNN_KERNELS", "").lower() != "python":
    _active = _compiled


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _active = BACKENDS[name]


def gather_sum(indptr, src, w, h):
    return _active.gather_sum(indptr, src, w, h)


def gather_sum_backward(indptr, src, w, h, g, need_w):
    return _active.gather_sum_backward(indptr, src, w, h, g, need_w)
