"""Recurrent sequence kernels with import-time backend selection.

The compiled extension (``_ckernels``) is used when it was built and
``NMTSELECT_PURE_PYTHON`` is unset; otherwise the numpy implementation in
``_pykernels`` is used. Both share one contract, see ``_pykernels``.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"

if not os.environ.get("NMTSELECT_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def _m(mask):
    return np.ascontiguousarray(mask, dtype=np.uint8)


def lstm_forward(zx, w_h, h0, c0, mask, reverse=False):
    dt = zx.dtype
    return _impl.lstm_forward(_c(zx, dt), _c(w_h, dt), _c(h0, dt), _c(c0, dt),
                              _m(mask), reverse)


def lstm_backward(acts, cs, hs, w_h, h0, c0, mask, dhs, reverse=False):
    dt = acts.dtype
    return _impl.lstm_backward(_c(acts, dt), _c(cs, dt), _c(hs, dt), _c(w_h, dt),
                               _c(h0, dt), _c(c0, dt), _m(mask), _c(dhs, dt),
                               reverse)


def gru_forward(zx, w_h, h0, mask, reverse=False):
    dt = zx.dtype
    return _impl.gru_forward(_c(zx, dt), _c(w_h, dt), _c(h0, dt), _m(mask), reverse)


def gru_backward(acts, zh, hs, w_h, h0, mask, dhs, reverse=False):
    dt = acts.dtype
    return _impl.gru_backward(_c(acts, dt), _c(zh, dt), _c(hs, dt), _c(w_h, dt),
                              _c(h0, dt), _m(mask), _c(dhs, dt), reverse)
