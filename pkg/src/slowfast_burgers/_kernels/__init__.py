"""Backend selection for the stepping kernels.

The compiled extension is preferred when present; the pure-numpy reference
implementation is the fallback.  ``SFBURGERS_BACKEND=python`` (or ``native``)
forces a choice, which matters for benchmarking and for reproducing runs on
machines without a C toolchain.
"""

import importlib
import os

from . import reference

_FORCE = os.environ.get("SFBURGERS_BACKEND", "auto").strip().lower()


def _try_native():
    try:
        return importlib.import_module("._native", __name__)
    except ImportError:
        return None


if _FORCE in ("auto", "native"):
    _native = _try_native()
    if _native is None and _FORCE == "native":
        raise ImportError(
            "SFBURGERS_BACKEND=native but the compiled kernels are not "
            "built; install with a C toolchain or unset the variable")
elif _FORCE in ("python", "reference"):
    _native = None
else:
    raise ValueError(f"unrecognized SFBURGERS_BACKEND={_FORCE!r}")

impl = _native if _native is not None else reference
BACKEND = impl.BACKEND_NAME

run_coupled = impl.run_coupled
run_auxiliary = impl.run_auxiliary
run_frozen = impl.run_frozen


def available_backends():
    """Names of the importable backends (native first when built)."""
    names = []
    if _native is not None or _try_native() is not None:
        names.append("native")
    names.append("python")
    return names


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name in ("python", "reference"):
        return reference
    if name == "native":
        mod = _native if _native is not None else _try_native()
        if mod is None:
            raise ImportError("native kernels are not built")
        return mod
    raise ValueError(f"unknown backend {name!r}")
