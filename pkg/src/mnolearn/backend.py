"""Kernel backend selection.

At import time the compiled kernels (``mnolearn._kernels``, built from
Cython) are preferred; the pure NumPy module ``mnolearn._kernels_py`` is the
fallback.  Set ``MNOLEARN_KERNELS=python`` or ``MNOLEARN_KERNELS=compiled``
to force a choice; forcing ``compiled`` raises if the extension is missing.

Both backends implement identical semantics.  Results agree to floating
round-off (summation order may differ), and each backend is individually
deterministic, which is what the byte-identical rerun guarantees rely on.
"""

import os

from . import _kernels_py

_FORCED = os.environ.get("MNOLEARN_KERNELS", "").strip().lower()

if _FORCED in ("python", "py"):
    kernels = _kernels_py
elif _FORCED in ("compiled", "c", "cython"):
    from . import _kernels as kernels  # noqa: F401
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py


def backend_name() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return kernels.BACKEND_NAME


def get_backend(name: str):
    """Fetch a specific backend module by name (for tests and benchmarks)."""
    if name in ("python", "py"):
        return _kernels_py
    if name in ("compiled", "c", "cython"):
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401

        names.append("compiled")
    except ImportError:
        pass
    return names
