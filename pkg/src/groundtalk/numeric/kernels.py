"""Backend selection for the hot kernels.

The compiled module is used when it was built; otherwise the numpy reference
is used. Set ``GROUNDTALK_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

_forced = os.environ.get("GROUNDTALK_KERNELS", "").lower()

if _forced == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _pykernels

BACKEND = _impl.BACKEND
gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
softmax_xent_forward = _impl.softmax_xent_forward
softmax_xent_backward = _impl.softmax_xent_backward
