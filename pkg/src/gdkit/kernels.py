"""Kernel backend selection.

The hot per-chunk loops live in a compiled extension (``gdkit._kernels_c``)
with a numpy fallback (``gdkit._kernels_py``).  The compiled backend is used
when available; set ``GDKIT_KERNELS=py`` or ``GDKIT_KERNELS=c`` to force a
choice (``c`` raises if the extension was not built).
"""

import importlib
import os

from .errors import ConfigError

_choice = os.environ.get("GDKIT_KERNELS", "").strip().lower()

if _choice == "py":
    from . import _kernels_py as _impl
elif _choice == "c":
    try:
        from . import _kernels_c as _impl
    except ImportError as exc:
        raise ConfigError(
            "GDKIT_KERNELS=c but the compiled kernels are not built"
        ) from exc
elif _choice == "":
    try:
        from . import _kernels_c as _impl
    except ImportError:
        from . import _kernels_py as _impl
else:
    raise ConfigError(f"unknown GDKIT_KERNELS value: {_choice!r}")

BACKEND = _impl.BACKEND

hamming_transform_batch = _impl.hamming_transform_batch
hamming_encode_batch = _impl.hamming_encode_batch
rs_encode_parity_batch = _impl.rs_encode_parity_batch
rs_syndromes_batch = _impl.rs_syndromes_batch


def available_backends() -> list[str]:
    names = []
    try:
        importlib.import_module("gdkit._kernels_c")
        names.append("c")
    except ImportError:
        pass
    names.append("py")
    return names


def get_backend(name: str):
    """Load a specific backend module (for tests and benchmarks)."""
    if name == "c":
        return importlib.import_module("gdkit._kernels_c")
    if name == "py":
        return importlib.import_module("gdkit._kernels_py")
    raise ConfigError(f"unknown kernel backend: {name!r}")
