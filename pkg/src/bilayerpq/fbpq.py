"""Table-based reranking in O(num_parts) per candidate.

The squared distance to an encoded point decomposes into query-codeword
inner products plus a query-independent term.  Everything is precomputed
into five tables at build time; per candidate the distance is assembled
from 2m + 4 table lookups, independent of the vector dimension:

* coarse_norms1/2: squared norms of the coarse codewords, one per half,
* fine_norms: squared norms of the fine codewords, (m, k),
* cross1: inner products of first-half coarse codewords with the fine
  codewords of parts p < m/2, (t, m/2, k),
* cross2: same for the second half and parts p >= m/2, (t, m/2, k).

Element count is exactly t*m*k + 2t + m*k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .multi_index import CoarsePair, MultiIndex, coarse_scan, select_top, traverse
from .quantizer import PqCodec


@dataclass(eq=False)
class FbpqTables:
    coarse_norms1: np.ndarray
    coarse_norms2: np.ndarray
    fine_norms: np.ndarray
    cross1: np.ndarray
    cross2: np.ndarray

    def __post_init__(self):
        t = self.coarse_norms1.shape[0]
        m2 = self.cross1.shape[1]
        k = self.fine_norms.shape[1]
        if self.coarse_norms2.shape != (t,):
            raise ValueError("coarse norm tables must have equal length")
        if self.fine_norms.shape != (2 * m2, k):
            raise ValueError("fine_norms shape does not match the cross tables")
        if self.cross1.shape != (t, m2, k) or self.cross2.shape != (t, m2, k):
            raise ValueError("cross tables must have shape (t, m/2, k)")

    @property
    def num_coarse(self) -> int:
        return self.coarse_norms1.shape[0]

    @property
    def num_parts(self) -> int:
        return self.fine_norms.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.fine_norms.shape[1]

    def element_count(self) -> int:
        return (
            self.coarse_norms1.size
            + self.coarse_norms2.size
            + self.fine_norms.size
            + self.cross1.size
            + self.cross2.size
        )


def table_element_counts(t: int, m: int, k: int) -> dict:
    """Element counts of the query-independent tables for given parameters."""
    return {
        "coarse_norms": 2 * t,
        "fine_norms": m * k,
        "cross": t * m * k,
        "total": t * m * k + 2 * t + m * k,
    }


def build_tables_from(coarse: CoarsePair, fine: PqCodec) -> FbpqTables:
    """Precompute the query-independent tables from the two codebook layers."""
    if coarse.dim != fine.dim:
        raise ValueError(
            f"coarse dimension {coarse.dim} does not match fine dimension {fine.dim}"
        )
    c1 = coarse.book1.centroids
    c2 = coarse.book2.centroids
    books = fine.codebooks
    m = fine.num_parts
    m2 = m // 2
    ds = fine.sub_dim
    cn1 = np.einsum("ij,ij->i", c1, c1)
    cn2 = np.einsum("ij,ij->i", c2, c2)
    fine_norms = np.einsum("mkj,mkj->mk", books, books)
    t = c1.shape[0]
    k = fine.size
    cross1 = np.empty((t, m2, k), np.float32)
    cross2 = np.empty((t, m2, k), np.float32)
    for p in range(m2):
        cross1[:, p, :] = c1[:, p * ds : (p + 1) * ds] @ books[p].T
        cross2[:, p, :] = c2[:, p * ds : (p + 1) * ds] @ books[m2 + p].T
    return FbpqTables(cn1, cn2, fine_norms, cross1, cross2)


def build_tables(index: MultiIndex) -> FbpqTables:
    """Precompute the query-independent tables for a global-codebook index."""
    if not isinstance(index, MultiIndex):
        raise TypeError("fbpq tables require a global-codebook MultiIndex")
    return build_tables_from(index.coarse, index.fine)


@dataclass(eq=False)
class FbpqQueryState:
    """Query-dependent lookup tables produced by one coarse + fine pass.

    fold combines the fine codeword norms with the query inner products
    (fine_norms - 2 * qdot_fine) so the per-candidate assembly touches one
    table per part instead of two.
    """

    q_norm: np.float32
    qdot_coarse1: np.ndarray
    qdot_coarse2: np.ndarray
    qdot_fine: np.ndarray
    fold: np.ndarray
    r1: np.ndarray
    r2: np.ndarray


def prepare_query(index: MultiIndex, tables: FbpqTables, q) -> FbpqQueryState:
    """Inner products of the query against every coarse and fine codeword.

    The same coarse pass yields both the traversal keys (r1, r2) and the
    coarse dot products, so query preprocessing stays one scan of each
    codebook plus one scan of the fine codebooks.
    """
    qr, dots1, dots2, r1, r2 = coarse_scan(index.coarse, q)
    books = index.fine.codebooks
    m = index.fine.num_parts
    ds = index.fine.sub_dim
    qdot_fine = np.empty((m, index.fine.size), np.float32)
    for p in range(m):
        qdot_fine[p] = books[p] @ qr[p * ds : (p + 1) * ds]
    fold = tables.fine_norms - 2.0 * qdot_fine
    q_norm = np.float32(qr @ qr)
    return FbpqQueryState(q_norm, dots1, dots2, qdot_fine, fold, r1, r2)


def fbpq_distance(state: FbpqQueryState, tables: FbpqTables, i: int, j: int, code) -> float:
    """Squared distance to one candidate from tables alone.

    O(num_parts) lookups and adds; never touches dim-sized data.
    """
    code = np.asarray(code).reshape(-1)
    m = tables.num_parts
    m2 = m // 2
    val = state.q_norm - 2.0 * (state.qdot_coarse1[i] + state.qdot_coarse2[j])
    val += tables.coarse_norms1[i] + tables.coarse_norms2[j]
    for p in range(m2):
        c = code[p]
        val += tables.fine_norms[p, c] - 2.0 * state.qdot_fine[p, c]
        val += 2.0 * tables.cross1[i, p, c]
    for p in range(m2, m):
        c = code[p]
        val += tables.fine_norms[p, c] - 2.0 * state.qdot_fine[p, c]
        val += 2.0 * tables.cross2[j, p - m2, c]
    return float(max(val, 0.0))


def scan_fbpq(index: MultiIndex, tables: FbpqTables, q, l: int):
    """Unsorted candidate (ids, distances) for a query at budget l."""
    state = prepare_query(index, tables, q)
    vis = traverse(index.cells, state.r1, state.r2, l)
    return kernels.scan_tables(
        *vis,
        index.ids,
        index.codes,
        state.q_norm,
        state.qdot_coarse1,
        state.qdot_coarse2,
        tables.coarse_norms1,
        tables.coarse_norms2,
        state.fold,
        tables.cross1,
        tables.cross2,
    )


def search_fbpq(index: MultiIndex, tables: FbpqTables, q, l: int, r: int):
    """Top-r (point ids, squared distances); traversal identical to the
    baseline engine, distances assembled from tables."""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    cand_ids, cand_d = scan_fbpq(index, tables, q, l)
    return select_top(cand_ids, cand_d, r)
