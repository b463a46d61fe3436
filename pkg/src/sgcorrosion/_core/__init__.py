"""Hot kernels of the scheme.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
pure-Python module ``_pykernels`` is used. Setting ``SGCORROSION_PURE=1``
forces the fallback.

Attributes
----------
BACKEND : str
    ``"cython"`` or ``"python"``.
"""

import os

from . import _pykernels
from ._errors import PivotError

if os.environ.get("SGCORROSION_PURE", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

bernoulli_array = _impl.bernoulli_array
thomas = _impl.thomas

__all__ = ["BACKEND", "PivotError", "bernoulli_array", "thomas"]
