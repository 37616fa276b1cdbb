"""Selects the compiled kernel module at import, with a pure-Python fallback."""

from . import _kernels_py

try:
    from . import _kernels  # compiled extension, built by setup.py
    HAVE_COMPILED = True
except ImportError:
    _kernels = None
    HAVE_COMPILED = False

_active = _kernels if HAVE_COMPILED else _kernels_py


def kernels():
    """The active kernel module (compiled when available)."""
    return _active


def active_backend() -> str:
    return "compiled" if _active is _kernels else "python"


def use_backend(name: str):
    """Force a backend ('compiled', 'python', or 'auto'). Meant for tests and benchmarks."""
    global _active
    if name == "python":
        _active = _kernels_py
    elif name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not available")
        _active = _kernels
    elif name == "auto":
        _active = _kernels if HAVE_COMPILED else _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    return _active
