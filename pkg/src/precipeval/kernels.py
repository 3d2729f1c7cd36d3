"""Backend selector for the hot per-frame kernels.

The compiled extension is preferred; the numpy fallback is used when the
extension was not built. Set ``PRECIPEVAL_KERNEL=python`` to force the
fallback (used by the benchmark and the parity tests), or
``PRECIPEVAL_KERNEL=cython`` to fail loudly when the extension is missing.

Both backends share one workspace layout (:func:`make_workspace`) so
callers can keep per-thread scratch buffers alive across frames instead
of hitting the allocator once per call; large per-call allocations are
mmap-backed and their teardown stalls sibling threads.
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("PRECIPEVAL_KERNEL", "auto").lower()

if _requested in ("python", "numpy", "py"):
    from . import _kernels_py as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _requested in ("cython", "c"):
            raise ImportError(
                "PRECIPEVAL_KERNEL=cython but the compiled extension is not "
                "built; run `pip install -e . --no-build-isolation`"
            ) from None
        from . import _kernels_py as _impl

        BACKEND = "numpy"

label_grid = _impl.label_grid
component_moments = _impl.component_moments
radix_count = _impl.radix_count


def make_workspace(rows: int, cols: int) -> dict:
    """Reusable scratch buffers for ``label_grid`` on one grid shape.

    The labels array returned by a workspace-backed ``label_grid`` call is
    owned by the workspace: consume it before the next call that shares
    the workspace (one workspace per thread).
    """
    cap = rows * cols // 2 + 2
    return {
        "shape": (rows, cols),
        "labels": np.empty((rows, cols), dtype=np.int32),
        "scratch": np.empty(2 * cap, dtype=np.int32),
        "mask": np.empty((rows, cols), dtype=bool),
    }
