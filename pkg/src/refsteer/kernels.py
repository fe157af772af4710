"""Hot-loop backend selection.

The compiled ADMM kernel is used when the extension was built; otherwise the
numpy fallback is loaded. Set ``REFSTEER_BACKEND=python`` to force the
fallback (benchmarks and cross-backend tests use this).
"""

import os

from . import _admm_py

SOLVED = _admm_py.SOLVED
RUNNING = _admm_py.RUNNING
INFEASIBLE = _admm_py.INFEASIBLE

try:
    from . import _admm as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _admm_py.admm_run}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.admm_run

_requested = os.environ.get("REFSTEER_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"REFSTEER_BACKEND={_requested!r} is not available; "
                      f"have {sorted(BACKENDS)}")
BACKEND = _requested or ("cython" if "cython" in BACKENDS else "python")
admm_run = BACKENDS[BACKEND]
