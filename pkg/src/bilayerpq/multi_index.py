"""Bilayer inverted index over a pair of half-space coarse codebooks.

Vectors are assigned to a cell (i, j) by quantizing their two halves
independently, and the residual displacement from the concatenated cell
centroid is PQ-encoded.  Queries enumerate cells in ascending order of
r1[i] + r2[j] (squared half-distances) and rerank the entries of the
visited cells.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import kernels
from .quantizer import (
    Codebook,
    PqCodec,
    Rotation,
    nearest_centroids,
    opq_train,
    pq_decode_batch,
    pq_encode_batch,
    pq_train,
)
from .vecio import as_matrix

MAX_PARTS = 16
MAX_CODEBOOK = 256


@dataclass(eq=False)
class CoarsePair:
    """Two coarse codebooks of equal size, one per vector half.

    An optional orthogonal rotation is applied to raw vectors before the
    halves are quantized; everything downstream (displacements, fine codes,
    queries) then lives in the rotated space.
    """

    book1: Codebook
    book2: Codebook
    rotation: Rotation | None = None

    def __post_init__(self):
        if self.book1.size != self.book2.size:
            raise ValueError("the two coarse codebooks must have equal size")
        if self.book1.dim != self.book2.dim:
            raise ValueError("the two coarse codebooks must have equal dimension")
        if self.rotation is not None and self.rotation.dim != self.dim:
            raise ValueError("rotation dimension does not match the codebooks")

    @property
    def size(self) -> int:
        return self.book1.size

    @property
    def half_dim(self) -> int:
        return self.book1.dim

    @property
    def dim(self) -> int:
        return 2 * self.book1.dim

    def rotate_in(self, xs: np.ndarray) -> np.ndarray:
        """Map raw vectors into the index's working space."""
        xs = np.atleast_2d(np.asarray(xs, np.float32))
        if xs.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: vectors {xs.shape[1]}, index {self.dim}")
        if self.rotation is None:
            return xs
        return self.rotation.rotate(xs)


@dataclass(eq=False)
class CellTable:
    """Entry ranges per cell: entries of cell (i, j) live at
    [offsets[i * t + j], offsets[i * t + j + 1])."""

    offsets: np.ndarray

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, np.int64)
        if self.offsets.ndim != 1 or self.offsets.shape[0] < 2:
            raise ValueError("offsets must be a 1-d array of t*t + 1 entries")
        if self.offsets[0] != 0 or np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must start at 0 and be non-decreasing")

    @property
    def num_cells(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def num_entries(self) -> int:
        return int(self.offsets[-1])


@dataclass(eq=False)
class MultiIndex:
    """Built index: coarse pair, cell table, packed entries, global fine codec."""

    coarse: CoarsePair
    cells: CellTable
    ids: np.ndarray
    codes: np.ndarray
    fine: PqCodec

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, np.uint32)
        self.codes = np.ascontiguousarray(self.codes, np.uint8)
        t = self.coarse.size
        if self.cells.num_cells != t * t:
            raise ValueError("cell table size does not match the coarse codebooks")
        if self.ids.shape[0] != self.cells.num_entries:
            raise ValueError("entry count does not match the cell table")
        if self.codes.shape != (self.ids.shape[0], self.fine.num_parts):
            raise ValueError("code array shape does not match the fine codec")

    @property
    def num_points(self) -> int:
        return self.ids.shape[0]

    @property
    def dim(self) -> int:
        return self.coarse.dim

    @property
    def num_coarse(self) -> int:
        return self.coarse.size

    @property
    def num_parts(self) -> int:
        return self.fine.num_parts

    @property
    def codebook_size(self) -> int:
        return self.fine.size

    @property
    def bytes_per_point(self) -> int:
        return 4 + self.fine.num_parts

    def populated_cells(self) -> int:
        return int(np.count_nonzero(np.diff(self.cells.offsets)))


def train_coarse(learn, t: int, optimized: bool = False, seed: int = 0) -> CoarsePair:
    """Two independent k-means codebooks on the vector halves.

    With optimized=True a global rotation is learned jointly with the two
    codebooks (treating the coarse layer as a 2-part product quantizer) and
    stored on the returned pair.
    """
    data = as_matrix(learn)
    if data.shape[1] % 2 != 0:
        raise ValueError(f"dimension must be even, got {data.shape[1]}")
    if optimized:
        rotation, codec = opq_train(data, 2, t, seed=seed)
    else:
        rotation = None
        codec = pq_train(data, 2, t, seed=seed)
    return CoarsePair(Codebook(codec.codebooks[0]), Codebook(codec.codebooks[1]), rotation)


def assign_cells_batch(coarse: CoarsePair, xs) -> tuple[np.ndarray, np.ndarray]:
    """Cell coordinates (i, j) per vector; ties break toward lower ids."""
    xr = coarse.rotate_in(as_matrix(xs))
    dh = coarse.half_dim
    i_idx, _ = nearest_centroids(np.ascontiguousarray(xr[:, :dh]), coarse.book1.centroids)
    j_idx, _ = nearest_centroids(np.ascontiguousarray(xr[:, dh:]), coarse.book2.centroids)
    return i_idx, j_idx


def assign_cell(coarse: CoarsePair, x) -> tuple[int, int]:
    i_idx, j_idx = assign_cells_batch(coarse, np.asarray(x, np.float32).reshape(1, -1))
    return int(i_idx[0]), int(j_idx[0])


def displacements(coarse: CoarsePair, xs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residuals from the assigned cell centroids, in the working space."""
    xr = coarse.rotate_in(as_matrix(xs))
    i_idx, j_idx = assign_cells_batch(coarse, xs)
    dh = coarse.half_dim
    disp = np.empty_like(xr)
    disp[:, :dh] = xr[:, :dh] - coarse.book1.centroids[i_idx]
    disp[:, dh:] = xr[:, dh:] - coarse.book2.centroids[j_idx]
    return disp, i_idx, j_idx


def train_fine_global(learn, coarse: CoarsePair, m: int, k: int, seed: int = 0) -> PqCodec:
    """Product quantizer trained on displacements pooled from all cells."""
    _check_fine_params(coarse.dim, m, k)
    disp, _, _ = displacements(coarse, learn)
    return pq_train(disp, m, k, seed=seed)


def _check_fine_params(dim: int, m: int, k: int) -> None:
    if m < 2 or m % 2 != 0:
        raise ValueError(f"number of parts must be even and >= 2, got {m}")
    if m > MAX_PARTS:
        raise ValueError(f"number of parts must be <= {MAX_PARTS}, got {m}")
    if dim % m != 0:
        raise ValueError(f"dimension {dim} is not divisible into {m} parts")
    if not 1 <= k <= MAX_CODEBOOK:
        raise ValueError(f"codebook size must be in [1, {MAX_CODEBOOK}], got {k}")


def build_index(base, coarse: CoarsePair, fine: PqCodec, id_offset: int = 0) -> MultiIndex:
    """Assign, encode and pack the base set into a MultiIndex.

    Entries are grouped by cell and ordered by ascending point id within
    each cell.  Point ids are id_offset + row position and must fit uint32.
    """
    data = as_matrix(base)
    _check_fine_params(coarse.dim, fine.num_parts, fine.size)
    n = data.shape[0]
    if id_offset < 0 or (n > 0 and id_offset + n - 1 > 0xFFFFFFFF):
        raise ValueError("point ids must fit in 32 bits")
    t = coarse.size
    disp, i_idx, j_idx = displacements(coarse, data)
    codes = pq_encode_batch(fine, disp).astype(np.uint8)
    lin = i_idx * t + j_idx
    order = np.argsort(lin, kind="stable")
    counts = np.bincount(lin, minlength=t * t)
    offsets = np.zeros(t * t + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    ids = (id_offset + order).astype(np.uint32)
    return MultiIndex(coarse, CellTable(offsets), ids, codes[order], fine)


def cell_sequence(r1, r2):
    """Lazily yield (i, j, key) for every cell with key = r1[i] + r2[j].

    Keys are emitted in non-decreasing order; equal keys break toward the
    smaller i, then the smaller j.  The frontier rule: popping (i, j)
    pushes (i+1, j) if j == 0 or (i+1, j-1) was popped, and (i, j+1) if
    i == 0 or (i-1, j+1) was popped, so each cell is pushed exactly once.
    """
    r1 = np.asarray(r1, np.float64)
    r2 = np.asarray(r2, np.float64)
    if r1.ndim != 1 or r1.shape != r2.shape:
        raise ValueError("r1 and r2 must be 1-d arrays of equal length")
    t = r1.shape[0]
    if t == 0:
        return
    order1 = np.argsort(r1, kind="stable")
    order2 = np.argsort(r2, kind="stable")
    sr1 = r1[order1]
    sr2 = r2[order2]
    popped = np.zeros((t, t), bool)
    heap = [(float(sr1[0] + sr2[0]), int(order1[0]), int(order2[0]), 0, 0)]
    while heap:
        key, oi, oj, a, b = heapq.heappop(heap)
        popped[a, b] = True
        yield oi, oj, key
        if a + 1 < t and (b == 0 or popped[a + 1, b - 1]):
            heapq.heappush(
                heap,
                (float(sr1[a + 1] + sr2[b]), int(order1[a + 1]), int(order2[b]), a + 1, b),
            )
        if b + 1 < t and (a == 0 or popped[a - 1, b + 1]):
            heapq.heappush(
                heap,
                (float(sr1[a] + sr2[b + 1]), int(order1[a]), int(order2[b + 1]), a, b + 1),
            )


def coarse_scan(coarse: CoarsePair, q):
    """One pass over the coarse codebooks for a query.

    Returns (rotated query, dots1, dots2, r1, r2) where dots are inner
    products with the half codewords and r are squared half-distances; the
    same pass feeds both the traversal keys and the table-based reranker.
    """
    qr = coarse.rotate_in(np.asarray(q, np.float32).reshape(1, -1))[0]
    dh = coarse.half_dim
    q1 = qr[:dh]
    q2 = qr[dh:]
    c1 = coarse.book1.centroids
    c2 = coarse.book2.centroids
    dots1 = c1 @ q1
    dots2 = c2 @ q2
    cn1 = np.einsum("ij,ij->i", c1, c1)
    cn2 = np.einsum("ij,ij->i", c2, c2)
    q1n = np.float32(q1 @ q1)
    q2n = np.float32(q2 @ q2)
    r1 = (cn1 - 2.0 * dots1) + q1n
    r2 = (cn2 - 2.0 * dots2) + q2n
    np.maximum(r1, np.float32(0.0), out=r1)
    np.maximum(r2, np.float32(0.0), out=r2)
    return qr, dots1, dots2, r1, r2


def multi_sequence(coarse: CoarsePair, q):
    """Cell enumeration for a query, in ascending squared-distance order."""
    _, _, _, r1, r2 = coarse_scan(coarse, q)
    return cell_sequence(r1, r2)


def traverse(cells: CellTable, r1: np.ndarray, r2: np.ndarray, budget: int):
    """Visited non-empty cells (i, j, start, end) under an entry budget.

    Cells come in cell_sequence order; traversal stops after the cell that
    brings the collected entry count to >= budget, or after all cells.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    t = r1.shape[0]
    empty = (
        np.empty(0, np.int32),
        np.empty(0, np.int32),
        np.empty(0, np.int64),
        np.empty(0, np.int64),
    )
    if cells.num_entries == 0:
        return empty
    order1 = np.argsort(r1, kind="stable").astype(np.int32)
    order2 = np.argsort(r2, kind="stable").astype(np.int32)
    sr1 = r1[order1].astype(np.float64)
    sr2 = r2[order2].astype(np.float64)
    return kernels.traverse_cells(sr1, sr2, order1, order2, cells.offsets, int(budget))


def select_top(ids: np.ndarray, dists: np.ndarray, r: int):
    """Top-r by ascending distance, ties by ascending point id."""
    n = ids.shape[0]
    if n == 0:
        return np.empty(0, np.uint32), np.empty(0, np.float32)
    if r < n:
        part = np.argpartition(dists, r - 1)[:r]
        thresh = dists[part].max()
        keep = np.flatnonzero(dists <= thresh)
    else:
        keep = np.arange(n)
    order = np.lexsort((ids[keep], dists[keep]))
    sel = keep[order[:r]]
    return ids[sel], dists[sel]


def _query_displacement_tables(coarse: CoarsePair, qr: np.ndarray):
    """Per-half query displacements against every coarse codeword, (t, dh)."""
    dh = coarse.half_dim
    e1 = qr[None, :dh] - coarse.book1.centroids
    e2 = qr[None, dh:] - coarse.book2.centroids
    return e1, e2


def scan_baseline(index: MultiIndex, q, l: int):
    """Unsorted candidate (ids, distances) for a query at budget l."""
    qr, _, _, r1, r2 = coarse_scan(index.coarse, q)
    vis = traverse(index.cells, r1, r2, l)
    e1, e2 = _query_displacement_tables(index.coarse, qr)
    return kernels.scan_global(*vis, index.ids, index.codes, e1, e2, index.fine.codebooks)


def search_baseline(index: MultiIndex, q, l: int, r: int):
    """Top-r (point ids, squared distances) by explicit reconstruction.

    Each candidate's distance is ||(q - cell centroid) - decoded
    displacement||^2, evaluated in O(dim) per candidate.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    cand_ids, cand_d = scan_baseline(index, q, l)
    return select_top(cand_ids, cand_d, r)


def encode_reconstruct(coarse: CoarsePair, fine: PqCodec, xs) -> np.ndarray:
    """Round vectors through the full coarse + fine encoding, back in the
    original (unrotated) space."""
    disp, i_idx, j_idx = displacements(coarse, xs)
    rec = pq_decode_batch(fine, pq_encode_batch(fine, disp))
    dh = coarse.half_dim
    rec[:, :dh] += coarse.book1.centroids[i_idx]
    rec[:, dh:] += coarse.book2.centroids[j_idx]
    if coarse.rotation is not None:
        rec = coarse.rotation.unrotate(rec)
    return rec
