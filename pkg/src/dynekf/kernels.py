"""Kernel selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when the environment variable ``DYNEKF_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the numpy implementation in ``_pykernels`` is used.
"""

import os

from . import _pykernels

IMPLEMENTATIONS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    IMPLEMENTATIONS["cython"] = _ckernels

_forced = os.environ.get("DYNEKF_PURE_PYTHON", "") not in ("", "0")
BACKEND = "cython" if (_ckernels is not None and not _forced) else "python"
_impl = IMPLEMENTATIONS[BACKEND]

measure_batch = _impl.measure_batch
inverse_measure_batch = _impl.inverse_measure_batch
cov_times_ht = _impl.cov_times_ht
innovation_cov = _impl.innovation_cov
procrustes = _impl.procrustes


def get(name: str):
    """Kernel module for ``"python"`` or ``"cython"``."""
    try:
        return IMPLEMENTATIONS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(IMPLEMENTATIONS)}") from None


def select(name: str) -> str:
    """Switch the active kernels to ``name``; returns the previous choice."""
    global BACKEND, _impl, measure_batch, inverse_measure_batch, cov_times_ht, innovation_cov, procrustes
    impl = get(name)
    previous = BACKEND
    BACKEND, _impl = name, impl
    measure_batch = impl.measure_batch
    inverse_measure_batch = impl.inverse_measure_batch
    cov_times_ht = impl.cov_times_ht
    innovation_cov = impl.innovation_cov
    procrustes = impl.procrustes
    return previous
