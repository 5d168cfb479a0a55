"""Pure-Python Z/2 column reduction; used when the compiled kernel is absent."""

from __future__ import annotations

import numpy as np


def reduce_boundary(indptr, indices, dims, max_dim):
    """Reduce a filtration-ordered boundary matrix over Z/2.

    Columns are processed from dimension ``max_dim + 1`` down to 1 so that
    pivot rows of higher-dimensional columns can be cleared (their columns
    are known to reduce to zero). Returns ``low``: the pivot row of each
    reduced column, or -1 for zero columns.
    """
    m = len(dims)
    low = np.full(m, -1, dtype=np.int64)
    pivot_col: dict[int, int] = {}
    reduced: dict[int, set] = {}
    cleared = set()
    indptr = indptr.tolist()
    indices = indices.tolist()
    dims = dims.tolist()
    for d in range(max_dim + 1, 0, -1):
        for j in range(m):
            if dims[j] != d or j in cleared:
                continue
            col = set(indices[indptr[j]:indptr[j + 1]])
            while col:
                r = max(col)
                i = pivot_col.get(r)
                if i is None:
                    break
                col ^= reduced[i]
            if col:
                r = max(col)
                low[j] = r
                pivot_col[r] = j
                reduced[j] = col
                cleared.add(r)
    return low
