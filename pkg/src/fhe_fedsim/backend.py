"""Kernel backend selection.

The hot kernels exist twice: numba-jitted and pure numpy with identical
semantics. Two kernel families are selected together by the env var
FHE_FEDSIM_BACKEND:

    auto   (default) numba if it imports, else numpy
    numba  require the jitted kernels
    numpy  force the vectorized fallback

Families: "ntt" (modular polynomial transforms backing the encryption)
and "qsim" (batched statevector gate application).
"""

import os

ENV_VAR = "FHE_FEDSIM_BACKEND"

_MODULES = {
    ("ntt", "numba"): "_ntt_numba",
    ("ntt", "numpy"): "_ntt_numpy",
    ("qsim", "numba"): "_qsim_numba",
    ("qsim", "numpy"): "_qsim_numpy",
}

_SELECTED_NAME = None
_LOADED = {}


def _import(family, name):
    import importlib

    return importlib.import_module(f".{_MODULES[(family, name)]}", package=__package__)


def _selected_name():
    global _SELECTED_NAME
    if _SELECTED_NAME is None:
        requested = os.environ.get(ENV_VAR, "auto").strip().lower()
        if requested not in ("auto", "numba", "numpy"):
            raise ValueError(f"{ENV_VAR} must be one of auto|numba|numpy, got {requested!r}")
        if requested in ("auto", "numba"):
            try:
                import numba  # noqa: F401

                _SELECTED_NAME = "numba"
            except ImportError:
                if requested == "numba":
                    raise
                _SELECTED_NAME = "numpy"
        else:
            _SELECTED_NAME = "numpy"
    return _SELECTED_NAME


def kernels(family="ntt"):
    """The active kernel module for a family (selected once per process)."""
    key = (family, _selected_name())
    mod = _LOADED.get(key)
    if mod is None:
        mod = _LOADED[key] = _import(*key)
    return mod


def active_backend():
    return _selected_name()


def backend_by_name(family, name):
    """Fetch a specific kernel module regardless of the env flag (benchmarks)."""
    return _import(family, name)
