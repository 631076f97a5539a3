"""Cell-local displacement codebooks.

Instead of one global fine codec, every coarse codeword of each half owns
its own per-part codebooks, trained on the displacements of the points
whose half mapped to that codeword.  Codes address the local books of the
entry's cell: the first m/2 indices go through books1[i], the rest through
books2[j].  Optionally one rotation per half, shared by all cells, is
learned on the pooled half displacements before the local training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._rng import seed_sequence
from .multi_index import (
    CellTable,
    CoarsePair,
    _check_fine_params,
    coarse_scan,
    displacements,
    select_top,
    traverse,
)
from .quantizer import (
    DEFAULT_KMEANS_ITERS,
    Rotation,
    _kmeans,
    _lloyd,
    nearest_centroids,
    opq_train,
    pq_train,
)
from .vecio import as_matrix

FALLBACK_REFINE_ITERS = 3


@dataclass(eq=False)
class LocalCodebookBank:
    """Per-cell fine codebooks: books1/books2 have shape (t, m/2, k, sub_dim)."""

    books1: np.ndarray
    books2: np.ndarray
    rot1: Rotation | None = None
    rot2: Rotation | None = None

    def __post_init__(self):
        self.books1 = np.ascontiguousarray(self.books1, np.float32)
        self.books2 = np.ascontiguousarray(self.books2, np.float32)
        if self.books1.ndim != 4 or self.books1.shape != self.books2.shape:
            raise ValueError("books1 and books2 must share a (t, m/2, k, sub_dim) shape")
        half = self.books1.shape[1] * self.books1.shape[3]
        for rot in (self.rot1, self.rot2):
            if rot is not None and rot.dim != half:
                raise ValueError("per-half rotation dimension must equal dim/2")

    @property
    def num_cells(self) -> int:
        return self.books1.shape[0]

    @property
    def num_parts(self) -> int:
        return 2 * self.books1.shape[1]

    @property
    def codebook_size(self) -> int:
        return self.books1.shape[2]

    @property
    def sub_dim(self) -> int:
        return self.books1.shape[3]

    @property
    def dim(self) -> int:
        return self.num_parts * self.sub_dim

    def element_count(self) -> int:
        return self.books1.size + self.books2.size


def bank_element_count(t: int, k: int, d: int) -> int:
    """Float count of a full bank: t cells * k codewords * d components."""
    return t * k * d


def _train_half(
    hdisp: np.ndarray,
    cell_idx: np.ndarray,
    t: int,
    m2: int,
    k: int,
    min_points: int,
    seed: int,
    half_tag: int,
    optimized: bool,
):
    """Local books for one half: full k-means per populated cell, pooled-book
    refinement for sparse cells, verbatim pooled books below k points."""
    ds = hdisp.shape[1] // m2
    pooled_seed = 2 * int(seed) + half_tag
    if optimized:
        rot, pooled = opq_train(hdisp, m2, k, seed=pooled_seed)
        hdisp = rot.rotate(hdisp)
    else:
        rot = None
        pooled = pq_train(hdisp, m2, k, seed=pooled_seed)
    books = np.empty((t, m2, k, ds), np.float32)
    order = np.argsort(cell_idx, kind="stable")
    sorted_cells = cell_idx[order]
    bounds = np.searchsorted(sorted_cells, np.arange(t + 1))
    full_threshold = max(min_points, k)
    for i in range(t):
        members = hdisp[order[bounds[i] : bounds[i + 1]]]
        n = members.shape[0]
        if n < k:
            books[i] = pooled.codebooks
            continue
        for p in range(m2):
            part = np.ascontiguousarray(members[:, p * ds : (p + 1) * ds])
            if n >= full_threshold:
                rng = np.random.default_rng(seed_sequence(seed, 2, half_tag, i, p))
                books[i, p] = _kmeans(part, k, DEFAULT_KMEANS_ITERS, rng)
            else:
                books[i, p] = _lloyd(part, pooled.codebooks[p], FALLBACK_REFINE_ITERS)
    return books, rot


def train_local_codebooks(
    learn,
    coarse: CoarsePair,
    m: int,
    k: int,
    min_points: int | None = None,
    seed: int = 0,
    optimized: bool = False,
) -> LocalCodebookBank:
    """Train per-cell displacement codebooks for both halves.

    Cells with fewer than min_points members (default 4 * k) fall back to
    pooled half-displacement books refined for at most 3 iterations; cells
    with fewer than k members copy the pooled books verbatim.  With
    optimized=True one rotation per half is learned on the pooled half
    displacements and shared across cells.
    """
    data = as_matrix(learn)
    _check_fine_params(coarse.dim, m, k)
    if min_points is None:
        min_points = 4 * k
    if min_points < 0:
        raise ValueError("min_points must be >= 0")
    t = coarse.size
    m2 = m // 2
    dh = coarse.half_dim
    disp, i_idx, j_idx = displacements(coarse, data)
    books1, rot1 = _train_half(
        np.ascontiguousarray(disp[:, :dh]), i_idx, t, m2, k, min_points, seed, 0, optimized
    )
    books2, rot2 = _train_half(
        np.ascontiguousarray(disp[:, dh:]), j_idx, t, m2, k, min_points, seed, 1, optimized
    )
    return LocalCodebookBank(books1, books2, rot1, rot2)


def _encode_half(books: np.ndarray, rot: Rotation | None, cell_idx: np.ndarray, hdisp: np.ndarray):
    """Codes of half displacements against their cell's local books."""
    if rot is not None:
        hdisp = rot.rotate(hdisp)
    m2 = books.shape[1]
    ds = books.shape[3]
    codes = np.empty((hdisp.shape[0], m2), np.int32)
    order = np.argsort(cell_idx, kind="stable")
    sorted_cells = cell_idx[order]
    bounds = np.searchsorted(sorted_cells, np.arange(books.shape[0] + 1))
    for i in range(books.shape[0]):
        rows = order[bounds[i] : bounds[i + 1]]
        if rows.size == 0:
            continue
        members = hdisp[rows]
        for p in range(m2):
            part = np.ascontiguousarray(members[:, p * ds : (p + 1) * ds])
            ids, _ = nearest_centroids(part, books[i, p])
            codes[rows, p] = ids
    return codes


def hbpq_encode_batch(
    bank: LocalCodebookBank, i_idx: np.ndarray, j_idx: np.ndarray, disp: np.ndarray
) -> np.ndarray:
    """Codes for displacement rows already assigned to cells (i_idx, j_idx)."""
    disp = np.atleast_2d(np.asarray(disp, np.float32))
    dh = bank.dim // 2
    if disp.shape[1] != bank.dim:
        raise ValueError(f"dimension mismatch: displacements {disp.shape[1]}, bank {bank.dim}")
    c1 = _encode_half(bank.books1, bank.rot1, np.asarray(i_idx), np.ascontiguousarray(disp[:, :dh]))
    c2 = _encode_half(bank.books2, bank.rot2, np.asarray(j_idx), np.ascontiguousarray(disp[:, dh:]))
    return np.concatenate([c1, c2], axis=1)


def hbpq_encode(bank: LocalCodebookBank, i: int, j: int, displacement) -> np.ndarray:
    """Code of one displacement against the local books of cell (i, j);
    the per-half rotation is applied first when present."""
    disp = np.asarray(displacement, np.float32).reshape(1, -1)
    return hbpq_encode_batch(
        bank, np.array([i], np.int64), np.array([j], np.int64), disp
    )[0]


def hbpq_decode_batch(
    bank: LocalCodebookBank, i_idx: np.ndarray, j_idx: np.ndarray, codes: np.ndarray
) -> np.ndarray:
    """Reconstructed displacements (rotations undone) for coded rows."""
    codes = np.atleast_2d(np.asarray(codes))
    m2 = bank.num_parts // 2
    ds = bank.sub_dim
    dh = m2 * ds
    i_idx = np.asarray(i_idx)
    j_idx = np.asarray(j_idx)
    out = np.empty((codes.shape[0], bank.dim), np.float32)
    for p in range(m2):
        out[:, p * ds : (p + 1) * ds] = bank.books1[i_idx, p, codes[:, p]]
    for p in range(m2):
        out[:, dh + p * ds : dh + (p + 1) * ds] = bank.books2[j_idx, p, codes[:, m2 + p]]
    if bank.rot1 is not None:
        out[:, :dh] = bank.rot1.unrotate(out[:, :dh])
    if bank.rot2 is not None:
        out[:, dh:] = bank.rot2.unrotate(out[:, dh:])
    return out


def hbpq_decode(bank: LocalCodebookBank, i: int, j: int, code) -> np.ndarray:
    return hbpq_decode_batch(
        bank, np.array([i], np.int64), np.array([j], np.int64), np.asarray(code).reshape(1, -1)
    )[0]


@dataclass(eq=False)
class HbpqIndex:
    """Built index over cell-local codebooks; layout mirrors MultiIndex."""

    coarse: CoarsePair
    cells: CellTable
    ids: np.ndarray
    codes: np.ndarray
    bank: LocalCodebookBank

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, np.uint32)
        self.codes = np.ascontiguousarray(self.codes, np.uint8)
        t = self.coarse.size
        if self.bank.num_cells != t:
            raise ValueError("bank cell count does not match the coarse codebooks")
        if self.bank.dim != self.coarse.dim:
            raise ValueError("bank dimension does not match the coarse codebooks")
        if self.cells.num_cells != t * t:
            raise ValueError("cell table size does not match the coarse codebooks")
        if self.ids.shape[0] != self.cells.num_entries:
            raise ValueError("entry count does not match the cell table")
        if self.codes.shape != (self.ids.shape[0], self.bank.num_parts):
            raise ValueError("code array shape does not match the bank")

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
        return self.bank.num_parts

    @property
    def codebook_size(self) -> int:
        return self.bank.codebook_size

    @property
    def bytes_per_point(self) -> int:
        return 4 + self.bank.num_parts

    def populated_cells(self) -> int:
        return int(np.count_nonzero(np.diff(self.cells.offsets)))


def build_hbpq_index(base, coarse: CoarsePair, bank: LocalCodebookBank, id_offset: int = 0) -> HbpqIndex:
    """Assign, locally encode and pack the base set.

    Cell assignment matches build_index exactly, so the cell table is
    identical to a global-codebook build over the same base and coarse pair.
    """
    data = as_matrix(base)
    _check_fine_params(coarse.dim, bank.num_parts, bank.codebook_size)
    n = data.shape[0]
    if id_offset < 0 or (n > 0 and id_offset + n - 1 > 0xFFFFFFFF):
        raise ValueError("point ids must fit in 32 bits")
    t = coarse.size
    disp, i_idx, j_idx = displacements(coarse, data)
    codes = hbpq_encode_batch(bank, i_idx, j_idx, disp).astype(np.uint8)
    lin = i_idx * t + j_idx
    order = np.argsort(lin, kind="stable")
    counts = np.bincount(lin, minlength=t * t)
    offsets = np.zeros(t * t + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    ids = (id_offset + order).astype(np.uint32)
    return HbpqIndex(coarse, CellTable(offsets), ids, codes[order], bank)


def scan_hbpq(index: HbpqIndex, q, l: int):
    """Unsorted candidate (ids, distances) for a query at budget l.

    Per visited cell the query displacement is computed (and rotated into
    the local space when rotations are present); per entry the distance is
    evaluated against the locally decoded displacement in O(dim).
    """
    qr, _, _, r1, r2 = coarse_scan(index.coarse, q)
    vis = traverse(index.cells, r1, r2, l)
    dh = index.coarse.half_dim
    e1 = qr[None, :dh] - index.coarse.book1.centroids
    e2 = qr[None, dh:] - index.coarse.book2.centroids
    if index.bank.rot1 is not None:
        e1 = index.bank.rot1.rotate(e1)
    if index.bank.rot2 is not None:
        e2 = index.bank.rot2.rotate(e2)
    return kernels.scan_local(
        *vis, index.ids, index.codes, e1, e2, index.bank.books1, index.bank.books2
    )


def search_hbpq(index: HbpqIndex, q, l: int, r: int):
    """Top-r (point ids, squared distances) over the local-codebook index."""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    cand_ids, cand_d = scan_hbpq(index, q, l)
    return select_top(cand_ids, cand_d, r)


def encode_reconstruct_local(coarse: CoarsePair, bank: LocalCodebookBank, xs) -> np.ndarray:
    """Round vectors through coarse + local encoding, back in the original space."""
    disp, i_idx, j_idx = displacements(coarse, xs)
    codes = hbpq_encode_batch(bank, i_idx, j_idx, disp)
    rec = hbpq_decode_batch(bank, i_idx, j_idx, codes)
    dh = coarse.half_dim
    rec[:, :dh] += coarse.book1.centroids[i_idx]
    rec[:, dh:] += coarse.book2.centroids[j_idx]
    if coarse.rotation is not None:
        rec = coarse.rotation.unrotate(rec)
    return rec
