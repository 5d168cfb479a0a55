"""Vietoris-Rips persistent homology in dimensions 0 and 1."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .embedding import PointCloud

if os.environ.get("TOPORFM_PURE_PYTHON"):
    from ._reduce_py import reduce_boundary
    BACKEND = "python"
else:
    try:
        from ._reduce import reduce_boundary
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._reduce_py import reduce_boundary
        BACKEND = "python"


@dataclass(frozen=True, order=True)
class PersistencePair:
    dim: int
    birth: float
    death: float

    @property
    def persistence(self) -> float:
        return self.death - self.birth


@dataclass(frozen=True)
class PersistenceDiagram:
    pairs: tuple

    def in_dim(self, dim: int) -> np.ndarray:
        """(m, 2) array of (birth, death) for one homology dimension."""
        rows = [(p.birth, p.death) for p in self.pairs if p.dim == dim]
        return np.array(rows, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class Barcode:
    """Interval view of a diagram, bars sorted by (dim, birth, death)."""

    bars: tuple

    def in_dim(self, dim: int) -> np.ndarray:
        rows = [(p.birth, p.death) for p in self.bars if p.dim == dim]
        return np.array(rows, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.bars)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def enclosing_radius(dist: np.ndarray) -> float:
    """Scale past which the Rips complex is a cone (no homology above H0)."""
    return float(dist.max(axis=1).min()) if len(dist) else 0.0


def rips_filtration(dist: np.ndarray, max_scale: float, max_dim: int = 1):
    """Simplices of the Rips complex up to dimension ``max_dim + 1``.

    Returns ``(simplices, values, dims, indptr, indices)`` in filtration
    order: by value, then dimension, then lexicographic vertex order. The
    boundary of column j is ``indices[indptr[j]:indptr[j+1]]`` (sorted
    filtration positions of its faces).
    """
    n = len(dist)
    iu, ju = np.triu_indices(n, 1)
    elen = dist[iu, ju]
    keep = elen <= max_scale
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    evals = elen[keep]

    groups = [(np.arange(n)[:, None], np.zeros(n))]
    groups.append((edges, evals))
    if max_dim >= 1 and n >= 3 and len(edges) >= 3:
        adj = dist <= max_scale
        tri = _triangles(adj, n)
        if len(tri):
            tvals = np.maximum(np.maximum(dist[tri[:, 0], tri[:, 1]], dist[tri[:, 0], tri[:, 2]]),
                               dist[tri[:, 1], tri[:, 2]])
            groups.append((tri, tvals))

    # order vertices < edges < triangles within equal values, lexicographic inside a dim
    all_vals, all_dims, all_simp = [], [], []
    for d, (simp, vals) in enumerate(groups):
        all_vals.append(vals)
        all_dims.append(np.full(len(vals), d, dtype=np.int8))
        all_simp.append(simp)
    vals = np.concatenate(all_vals)
    dims = np.concatenate(all_dims)
    width = max_dim + 2
    padded = np.full((len(vals), width), -1, dtype=np.int64)
    pos = 0
    for simp in all_simp:
        padded[pos:pos + len(simp), :simp.shape[1]] = simp
        pos += len(simp)
    keys = [padded[:, c] for c in range(width - 1, -1, -1)] + [dims, vals]
    order = np.lexsort(keys)
    vals, dims, padded = vals[order], dims[order], padded[order]

    # face lookup tables
    edge_pos = np.full((n, n), -1, dtype=np.int64)
    e_at = np.flatnonzero(dims == 1)
    edge_pos[padded[e_at, 0], padded[e_at, 1]] = e_at

    counts = np.zeros(len(order), dtype=np.int64)
    counts[dims == 1] = 2
    counts[dims == 2] = 3
    indptr = np.zeros(len(order) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    # vertices occupy positions 0..n-1 in index order (value 0, lowest dim)
    ev = padded[e_at, :2]
    faces = np.sort(ev, axis=1)
    indices[indptr[e_at][:, None] + np.arange(2)] = faces
    t_at = np.flatnonzero(dims == 2)
    if len(t_at):
        a, b, c = padded[t_at, 0], padded[t_at, 1], padded[t_at, 2]
        faces = np.sort(np.stack([edge_pos[a, b], edge_pos[a, c], edge_pos[b, c]], axis=1), axis=1)
        indices[indptr[t_at][:, None] + np.arange(3)] = faces
    return padded, vals, dims, indptr, indices


def _triangles(adj: np.ndarray, n: int) -> np.ndarray:
    out = []
    for i in range(n - 2):
        nbr = np.flatnonzero(adj[i, i + 1:]) + i + 1
        if len(nbr) < 2:
            continue
        sub = adj[np.ix_(nbr, nbr)]
        jj, kk = np.nonzero(np.triu(sub, 1))
        if len(jj):
            out.append(np.stack([np.full(len(jj), i), nbr[jj], nbr[kk]], axis=1))
    if not out:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def rips_persistence(cloud: PointCloud, max_scale: float | None = None, max_dim: int = 1,
                     deduplicate: bool = True) -> PersistenceDiagram:
    """Persistence diagram of the Euclidean Vietoris-Rips filtration.

    Parameters
    ----------
    cloud : PointCloud
    max_scale : float, optional
        Largest edge length in the filtration. Defaults to the enclosing
        radius, beyond which no H1 class survives.
    max_dim : {0, 1}
    deduplicate : bool
        Reduce over distinct points only. Coincident points change nothing
        but add zero-length H0 bars, which are appended so that the H0 bar
        count always equals the point count.

    Notes
    -----
    Zero-persistence pairs are dropped in dimension 1 and kept in
    dimension 0. Classes alive at ``max_scale`` get ``death = inf``.
    """
    if max_dim not in (0, 1):
        raise ValueError("max_dim must be 0 or 1")
    pts = cloud.points if isinstance(cloud, PointCloud) else PointCloud(cloud).points
    if len(pts) == 0:
        raise DataError("empty point cloud")
    n_total = len(pts)
    if deduplicate:
        pts = np.unique(pts, axis=0)
    dist = pairwise_distances(pts)
    if max_scale is None:
        max_scale = enclosing_radius(dist)
    elif max_scale <= 0:
        raise ValueError("max_scale must be positive")

    _, vals, dims, indptr, indices = rips_filtration(dist, max_scale, max_dim)
    low = reduce_boundary(indptr, indices, dims, max_dim)
    pairs = _pairs_from_low(low, vals, dims, max_dim)
    extra = n_total - len(pts)
    pairs.extend([PersistencePair(0, 0.0, 0.0)] * extra)
    return PersistenceDiagram(tuple(sorted(pairs)))


def _pairs_from_low(low, vals, dims, max_dim):
    pairs = []
    killed = np.zeros(len(low), dtype=bool)
    cols = np.flatnonzero(low >= 0)
    killed[low[cols]] = True
    for j in cols:
        r = low[j]
        d = int(dims[r])
        if d > max_dim:
            continue
        b, e = float(vals[r]), float(vals[j])
        if d > 0 and e == b:
            continue
        pairs.append(PersistencePair(d, b, e))
    essential = np.flatnonzero((low < 0) & ~killed & (dims <= max_dim))
    for j in essential:
        pairs.append(PersistencePair(int(dims[j]), float(vals[j]), float("inf")))
    return pairs


def barcode(diagram: PersistenceDiagram) -> Barcode:
    return Barcode(tuple(sorted(diagram.pairs, key=lambda p: (p.dim, p.birth, p.death))))


def diagram_to_csv(diagram: PersistenceDiagram) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["dim", "birth", "death"])
    for p in barcode(diagram).bars:
        w.writerow([p.dim, repr(p.birth), "inf" if np.isinf(p.death) else repr(p.death)])
    return out.getvalue()


def diagram_from_csv(text: str) -> PersistenceDiagram:
    rows = list(csv.DictReader(io.StringIO(text)))
    return PersistenceDiagram(tuple(sorted(
        PersistencePair(int(r["dim"]), float(r["birth"]), float(r["death"])) for r in rows)))


__all__ = [
    "BACKEND", "Barcode", "PersistenceDiagram", "PersistencePair", "barcode",
    "diagram_from_csv", "diagram_to_csv", "enclosing_radius", "pairwise_distances",
    "rips_filtration", "rips_persistence",
]
