"""Kernel backend selection.

``compiled`` is the Cython extension when it was built, else None; ``pure``
is always importable.  ``active`` is the module the client loop dispatches
through.  The two backends are bit-identical by construction, so switching
is a pure speed choice.  Set FEDSIM_PURE_KERNELS=1 to force the fallback.
"""

from __future__ import annotations

import os

from . import pure

try:
    from . import _speedups as compiled
except ImportError:
    compiled = None

if compiled is not None and not os.environ.get("FEDSIM_PURE_KERNELS"):
    active = compiled
else:
    active = pure


def use(name: str) -> None:
    """Switch the active backend to 'pure' or 'compiled'."""
    global active
    if name == "pure":
        active = pure
    elif name == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        active = compiled
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def backend_name() -> str:
    return "compiled" if active is compiled and compiled is not None else "pure"
