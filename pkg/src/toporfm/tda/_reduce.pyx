# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Z/2 column reduction (same contract as ``_reduce_py``)."""

import numpy as np

from libc.stdint cimport int64_t
from libcpp.vector cimport vector


cdef inline void _symdiff(vector[int64_t]& a, vector[int64_t]& b, vector[int64_t]& out) noexcept nogil:
    # a, b sorted ascending; out <- a xor b, sorted
    cdef size_t i = 0, j = 0
    cdef size_t na = a.size(), nb = b.size()
    out.clear()
    while i < na and j < nb:
        if a[i] < b[j]:
            out.push_back(a[i])
            i += 1
        elif b[j] < a[i]:
            out.push_back(b[j])
            j += 1
        else:
            i += 1
            j += 1
    while i < na:
        out.push_back(a[i])
        i += 1
    while j < nb:
        out.push_back(b[j])
        j += 1


def reduce_boundary(const int64_t[::1] indptr, const int64_t[::1] indices,
                    const signed char[::1] dims, int max_dim):
    cdef Py_ssize_t m = dims.shape[0]
    low = np.full(m, -1, dtype=np.int64)
    cdef int64_t[::1] low_v = low
    cdef vector[int64_t] pivot_col
    cdef vector[vector[int64_t]] reduced
    cdef vector[char] cleared
    cdef vector[int64_t] col, tmp
    cdef Py_ssize_t j, k
    cdef int64_t r, i
    cdef int d

    pivot_col.assign(m, -1)
    reduced.resize(m)
    cleared.assign(m, 0)
    with nogil:
        d = max_dim + 1
        while d >= 1:
            for j in range(m):
                if dims[j] != d or cleared[j]:
                    continue
                col.clear()
                for k in range(indptr[j], indptr[j + 1]):
                    col.push_back(indices[k])
                while col.size() > 0:
                    r = col.back()
                    i = pivot_col[r]
                    if i < 0:
                        break
                    _symdiff(col, reduced[i], tmp)
                    col.swap(tmp)
                if col.size() > 0:
                    r = col.back()
                    low_v[j] = r
                    pivot_col[r] = j
                    reduced[j] = col
                    cleared[r] = 1
            d -= 1
    return low
