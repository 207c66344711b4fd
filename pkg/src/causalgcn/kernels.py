"""Select the CRF lattice kernels: compiled extension if built, numpy otherwise.

Set ``CAUSALGCN_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _crf_py

try:
    if os.environ.get("CAUSALGCN_PURE_PYTHON"):
        raise ImportError("pure-python kernels requested")
    from . import _crf_ext as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _crf_py
    BACKEND = "python"

crf_forward_backward = _impl.crf_forward_backward
viterbi = _impl.viterbi

__all__ = ["BACKEND", "crf_forward_backward", "viterbi"]
