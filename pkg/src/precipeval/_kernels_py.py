"""Pure-numpy fallback for the hot per-frame kernels.

Same contract and, by construction, bit-identical output to the compiled
backend in ``_kernels.pyx``: labels are numbered by row-major first
occurrence, and every float accumulation happens elementwise in float64
in row-major order (``np.bincount`` adds sequentially in array order,
matching the C loop). Expect it to be slower and to gain less from
threads; the workspace hooks are honored but numpy still allocates
temporaries internally.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

_STRUCTURE_4 = ndimage.generate_binary_structure(2, 1)
_STRUCTURE_8 = ndimage.generate_binary_structure(2, 2)


def label_grid(values: np.ndarray, threshold: float, connectivity: int, workspace=None):
    """Label connected components of ``values >= threshold``.

    Returns ``(labels, n)`` where ``labels`` is int32 with background 0 and
    components numbered 1..n in order of their first row-major pixel. With
    a workspace the labels array is workspace-owned and valid only until
    the next call using the same workspace.
    """
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    if workspace is None:
        mask = values >= threshold
        labels = np.zeros(values.shape, dtype=np.int32)
    else:
        labels = workspace["labels"]
        mask = workspace["mask"]
        if labels.shape != values.shape:
            raise ValueError("workspace does not match grid shape")
        np.greater_equal(values, threshold, out=mask)
    n = int(ndimage.label(mask, structure=structure, output=labels))
    if n == 0:
        return labels, 0
    # scipy's numbering is an implementation detail; renumber by first
    # occurrence so both backends and the flood-fill oracle agree.
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    keep = uniq > 0
    uniq, first = uniq[keep], first[keep]
    lut = np.zeros(n + 1, dtype=np.int32)
    lut[uniq[np.argsort(first, kind="stable")]] = np.arange(1, n + 1, dtype=np.int32)
    labels[...] = lut[labels]
    return labels, n


def component_moments(labels: np.ndarray, values: np.ndarray, n: int):
    """Per-component rainfall-weighted moments in pixel-index units.

    Returns ``(counts, mass, mean_col, mean_row, cxx, cyy, cxy, first_idx)``
    where the c* entries are raw central second-moment sums (weighted by
    rain rate, not yet normalized by mass) and ``first_idx`` is the flat
    row-major index of each component's first pixel.
    """
    flat_lab = labels.ravel()
    sel = np.flatnonzero(flat_lab)
    lab = flat_lab[sel]
    cols = labels.shape[1]
    c = (sel % cols).astype(np.float64)
    r = (sel // cols).astype(np.float64)
    v = values.ravel()[sel].astype(np.float64)

    counts = np.bincount(lab, minlength=n + 1)[1:]
    mass = np.bincount(lab, weights=v, minlength=n + 1)[1:]
    sx = np.bincount(lab, weights=v * c, minlength=n + 1)[1:]
    sy = np.bincount(lab, weights=v * r, minlength=n + 1)[1:]
    mean_col = sx / mass
    mean_row = sy / mass

    dx = c - mean_col[lab - 1]
    dy = r - mean_row[lab - 1]
    vdx = v * dx
    vdy = v * dy
    cxx = np.bincount(lab, weights=vdx * dx, minlength=n + 1)[1:]
    cyy = np.bincount(lab, weights=vdy * dy, minlength=n + 1)[1:]
    cxy = np.bincount(lab, weights=vdx * dy, minlength=n + 1)[1:]

    uniq, fi = np.unique(lab, return_index=True)
    first_idx = np.empty(n, dtype=np.int64)
    first_idx[uniq - 1] = sel[fi]
    return counts.astype(np.int64), mass, mean_col, mean_row, cxx, cyy, cxy, first_idx


def radix_count(bits: np.ndarray, shift: int, prefix: int, counts: np.ndarray) -> None:
    """Accumulate the 16-bit bucket histogram of ``(x >> shift) & 0xFFFF``
    over elements whose bits above ``shift + 16`` equal ``prefix``."""
    t = bits.dtype.type
    nbits = bits.dtype.itemsize * 8
    hi = shift + 16
    if hi < nbits:
        bits = bits[(bits >> t(hi)) == t(prefix)]
    buckets = (bits >> t(shift)).astype(np.int64)
    buckets &= 0xFFFF
    counts += np.bincount(buckets, minlength=65536)
