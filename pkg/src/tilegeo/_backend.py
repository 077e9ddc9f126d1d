"""Select the hot-kernel implementation at import time.

The compiled ``_kernels`` extension is used when it imports cleanly. Setting
``TILEGEO_PURE_PYTHON=1`` forces the numpy fallback, which is also used when
the extension was never built.
"""

import os

if os.environ.get("TILEGEO_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        from . import _kernels_py as kernels

COMPILED = kernels.__name__.rsplit(".", 1)[-1] == "_kernels"
