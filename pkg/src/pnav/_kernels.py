"""Select the integrator backend: compiled if importable, else pure Python.

Set ``PNAV_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _simcore_py

if os.environ.get("PNAV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _simcore_py
else:
    try:
        from . import _simcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _simcore_py

simulate = _impl.simulate
BACKEND = _impl.BACKEND
