# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-frame kernels: union-find component labeling,
rainfall-weighted component moments, and radix bucket counting for pooled
quantiles.

Must stay bit-identical to ``_kernels_py``: same label numbering
(row-major first occurrence) and the same float64 operation order in the
moment accumulations.

``label_grid`` and ``radix_count`` accept caller-owned buffers so hot
loops can run without touching the allocator (large per-call numpy
allocations are mmap-backed and their teardown serializes threads).
"""

import numpy as np

cimport cython
from libc.stdint cimport int32_t, int64_t, uint32_t, uint64_t

ctypedef fused floating:
    float
    double

ctypedef fused uint_bits:
    uint32_t
    uint64_t


# Raw pointers, not memoryviews: passing a memoryview struct would
# refcount it on every call, which serializes threads.
cdef inline int32_t _find(int32_t* parent, int32_t x) nogil:
    cdef int32_t root = x
    cdef int32_t nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


# Union by rank keeps chains short on dense masks; which id ends up as the
# root is irrelevant because the second labeling pass renumbers components
# by first occurrence anyway.
cdef inline int32_t _union(int32_t* parent, int32_t* rank, int32_t a, int32_t b) nogil:
    cdef int32_t ra = _find(parent, a)
    cdef int32_t rb = _find(parent, b)
    if ra == rb:
        return ra
    if rank[ra] < rank[rb]:
        parent[ra] = rb
        return rb
    if rank[rb] < rank[ra]:
        parent[rb] = ra
        return ra
    parent[rb] = ra
    rank[ra] += 1
    return ra


def label_grid(const floating[:, ::1] values, double threshold, int connectivity,
               workspace=None):
    """Label connected components of ``values >= threshold``.

    Returns ``(labels, n)``: int32 labels with background 0, components
    numbered 1..n by row-major first occurrence. With a ``workspace``
    (see :func:`precipeval.kernels.make_workspace`) the returned labels
    array is workspace-owned and only valid until the next call that
    uses the same workspace.
    """
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t cols = values.shape[1]
    cdef Py_ssize_t cap = rows * cols // 2 + 2
    if workspace is None:
        labels_arr = np.zeros((rows, cols), dtype=np.int32)
        scratch_arr = np.empty(2 * cap, dtype=np.int32)
    else:
        labels_arr = workspace["labels"]
        scratch_arr = workspace["scratch"]
        if labels_arr.shape != (rows, cols) or scratch_arr.shape[0] < 2 * cap:
            raise ValueError("workspace does not match grid shape")
        labels_arr.fill(0)
    cdef int32_t[:, ::1] labels = labels_arr
    cdef int32_t[::1] scratch = scratch_arr
    cdef int32_t* parent = &scratch[0]
    # second half doubles as union rank in pass 1, canonical ids in pass 2
    cdef int32_t* aux = &scratch[cap]
    cdef bint eight = connectivity == 8
    cdef Py_ssize_t r, c
    cdef int32_t m = 0, base, nb, root, nfinal = 0
    cdef int32_t l

    with nogil:
        for r in range(rows):
            for c in range(cols):
                if values[r, c] >= threshold:
                    base = 0
                    if c > 0 and labels[r, c - 1] != 0:
                        base = _find(parent, labels[r, c - 1])
                    if r > 0:
                        if labels[r - 1, c] != 0:
                            nb = labels[r - 1, c]
                            base = nb if base == 0 else _union(parent, aux, base, nb)
                        if eight:
                            if c > 0 and labels[r - 1, c - 1] != 0:
                                nb = labels[r - 1, c - 1]
                                base = nb if base == 0 else _union(parent, aux, base, nb)
                            if c + 1 < cols and labels[r - 1, c + 1] != 0:
                                nb = labels[r - 1, c + 1]
                                base = nb if base == 0 else _union(parent, aux, base, nb)
                    if base == 0:
                        m += 1
                        parent[m] = m
                        aux[m] = 0
                        labels[r, c] = m
                    else:
                        labels[r, c] = _find(parent, base)
        for l in range(m + 1):
            aux[l] = 0
        for r in range(rows):
            for c in range(cols):
                if labels[r, c] != 0:
                    root = _find(parent, labels[r, c])
                    if aux[root] == 0:
                        nfinal += 1
                        aux[root] = nfinal
                    labels[r, c] = aux[root]
    return labels_arr, int(nfinal)


def component_moments(const int32_t[:, ::1] labels, const floating[:, ::1] values, int n):
    """Per-component rainfall-weighted moments in pixel-index units.

    Two passes: means first, then central second moments, so single-pixel
    components come out with exactly zero covariance. Matches
    ``_kernels_py.component_moments`` bit for bit.
    """
    cdef Py_ssize_t rows = labels.shape[0]
    cdef Py_ssize_t cols = labels.shape[1]
    counts_arr = np.zeros(n + 1, dtype=np.int64)
    mass_arr = np.zeros(n + 1, dtype=np.float64)
    sx_arr = np.zeros(n + 1, dtype=np.float64)
    sy_arr = np.zeros(n + 1, dtype=np.float64)
    meanx_arr = np.zeros(n + 1, dtype=np.float64)
    meany_arr = np.zeros(n + 1, dtype=np.float64)
    cxx_arr = np.zeros(n + 1, dtype=np.float64)
    cyy_arr = np.zeros(n + 1, dtype=np.float64)
    cxy_arr = np.zeros(n + 1, dtype=np.float64)
    first_arr = np.full(n + 1, -1, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef double[::1] mass = mass_arr
    cdef double[::1] sx = sx_arr
    cdef double[::1] sy = sy_arr
    cdef double[::1] meanx = meanx_arr
    cdef double[::1] meany = meany_arr
    cdef double[::1] cxx = cxx_arr
    cdef double[::1] cyy = cyy_arr
    cdef double[::1] cxy = cxy_arr
    cdef int64_t[::1] first = first_arr
    cdef Py_ssize_t r, c
    cdef int32_t lab
    cdef double v, dx, dy, vdx, vdy
    cdef int l

    with nogil:
        for r in range(rows):
            for c in range(cols):
                lab = labels[r, c]
                if lab != 0:
                    v = <double> values[r, c]
                    counts[lab] += 1
                    mass[lab] += v
                    sx[lab] += v * <double> c
                    sy[lab] += v * <double> r
                    if first[lab] < 0:
                        first[lab] = r * cols + c
        for l in range(1, n + 1):
            meanx[l] = sx[l] / mass[l]
            meany[l] = sy[l] / mass[l]
        for r in range(rows):
            for c in range(cols):
                lab = labels[r, c]
                if lab != 0:
                    v = <double> values[r, c]
                    dx = <double> c - meanx[lab]
                    dy = <double> r - meany[lab]
                    vdx = v * dx
                    vdy = v * dy
                    cxx[lab] += vdx * dx
                    cyy[lab] += vdy * dy
                    cxy[lab] += vdx * dy
    return (
        counts_arr[1:],
        mass_arr[1:],
        meanx_arr[1:],
        meany_arr[1:],
        cxx_arr[1:],
        cyy_arr[1:],
        cxy_arr[1:],
        first_arr[1:],
    )


def radix_count(const uint_bits[::1] bits, int shift, unsigned long long prefix,
                int64_t[::1] counts):
    """Accumulate a 16-bit bucket histogram of ``(x >> shift) & 0xFFFF``
    over the elements whose bits above ``shift + 16`` equal ``prefix``.

    ``counts`` (length 65536) is accumulated into, not reset — callers own
    zeroing and may merge per-thread partials in any order.
    """
    cdef Py_ssize_t i, n = bits.shape[0]
    cdef int hi = shift + 16
    cdef int nbits = 32 if uint_bits is uint32_t else 64
    cdef uint64_t p = <uint64_t> prefix
    cdef uint64_t x
    with nogil:
        if hi >= nbits:
            for i in range(n):
                counts[(<uint64_t> bits[i] >> shift) & 0xFFFF] += 1
        else:
            for i in range(n):
                x = <uint64_t> bits[i]
                if (x >> hi) == p:
                    counts[(x >> shift) & 0xFFFF] += 1
