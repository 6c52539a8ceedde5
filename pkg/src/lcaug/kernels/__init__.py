"""Hot warp kernel with a compiled core and a pure-numpy fallback.

`BACKEND` reports which implementation was selected at import time
("cython" or "numpy"); set LCAUG_FORCE_NUMPY=1 to force the fallback.
"""

from __future__ import annotations

import os

from . import _warp_py

if os.environ.get("LCAUG_FORCE_NUMPY"):
    affine_warp = _warp_py.affine_warp
    BACKEND = "numpy"
else:
    try:
        from . import _warp

        affine_warp = _warp.affine_warp
        BACKEND = "cython"
    except ImportError:
        affine_warp = _warp_py.affine_warp
        BACKEND = "numpy"

__all__ = ["affine_warp", "BACKEND"]
