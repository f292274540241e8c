# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the scatter/segment hot loops.

Accumulation order is identical to the numpy fallback (increasing input
index), so both backends produce bit-identical results.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

ctypedef fused floating:
    float
    double


def _scatter_add_rows_impl(floating[:, ::1] out, const long long[::1] idx,
                           floating[:, ::1] rows):
    cdef Py_ssize_t k = idx.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    cdef Py_ssize_t i, j
    cdef long long r
    for i in range(k):
        r = idx[i]
        for j in range(d):
            out[r, j] += rows[i, j]


def _scatter_add_1d_impl(floating[::1] out, const long long[::1] idx,
                         floating[::1] vals):
    cdef Py_ssize_t k = idx.shape[0]
    cdef Py_ssize_t i
    for i in range(k):
        out[idx[i]] += vals[i]


def _segment_max_impl(const floating[::1] values, const long long[::1] seg,
                      floating[::1] out):
    cdef Py_ssize_t k = values.shape[0]
    cdef Py_ssize_t i
    cdef long long s
    for i in range(k):
        s = seg[i]
        if values[i] > out[s]:
            out[s] = values[i]


def scatter_add_rows(out, idx, rows):
    """out[idx[i]] += rows[i], accumulated in increasing i. Mutates ``out``."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if out.ndim == 1:
        _scatter_add_1d_impl(out, idx, np.ascontiguousarray(rows))
    else:
        _scatter_add_rows_impl(out, idx, np.ascontiguousarray(rows))
    return out


def segment_sum(values, seg, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets given by ``seg``."""
    if values.ndim == 1:
        out = np.zeros(num_segments, dtype=values.dtype)
    else:
        out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    scatter_add_rows(out, seg, values)
    return out


def segment_max(values, seg, num_segments):
    """Per-segment max of a 1-D array; empty segments give -inf."""
    out = np.full(num_segments, -np.inf, dtype=values.dtype)
    _segment_max_impl(np.ascontiguousarray(values),
                      np.ascontiguousarray(seg, dtype=np.int64), out)
    return out
