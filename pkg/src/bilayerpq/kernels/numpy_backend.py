"""Pure-NumPy kernel implementations.

The traversal materializes all T*T cell keys and sorts once; the scans
vectorize over the expanded candidate list.  Functionally identical to the
numba backend, preferred only where numba is unavailable or disabled.
"""

import numpy as np


def _expand(starts, ends):
    """Turn per-cell entry ranges into one flat array of entry indices."""
    lens = (ends - starts).astype(np.int64)
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, np.int64), lens
    base = np.repeat(starts, lens)
    shift = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(lens) - lens, lens)
    return base + shift, lens


def traverse_cells(sorted_r1, sorted_r2, order1, order2, offsets, budget):
    t = sorted_r1.shape[0]
    keys = (sorted_r1[:, None] + sorted_r2[None, :]).ravel()
    oi = np.repeat(order1.astype(np.int64), t)
    oj = np.tile(order2.astype(np.int64), t)
    # Total order: ascending key, ties by original (i, j).
    rank = np.lexsort((oj, oi, keys))
    lin = oi * t + oj
    counts = offsets[lin + 1] - offsets[lin]
    counts_sorted = counts[rank]
    cum = np.cumsum(counts_sorted)
    total = int(cum[-1]) if cum.shape[0] else 0
    if total <= budget:
        nvis = t * t
    else:
        # First position where the running total reaches the budget; that
        # cell is still visited in full.
        nvis = int(np.searchsorted(cum, budget, side="left")) + 1
    visited = rank[:nvis]
    nonempty = visited[counts[visited] > 0]
    return (
        oi[nonempty].astype(np.int32),
        oj[nonempty].astype(np.int32),
        offsets[lin[nonempty]].astype(np.int64),
        offsets[lin[nonempty] + 1].astype(np.int64),
    )


def scan_global(vis_i, vis_j, starts, ends, ids, codes, e1, e2, books):
    idx, lens = _expand(starts, ends)
    n = idx.shape[0]
    m, _, ds = books.shape
    dh = e1.shape[1]
    if n == 0:
        return np.empty(0, np.uint32), np.empty(0, np.float32)
    ci = np.repeat(vis_i.astype(np.int64), lens)
    cj = np.repeat(vis_j.astype(np.int64), lens)
    c = codes[idx]
    m2 = m // 2
    diff = np.empty((n, 2 * dh), np.float32)
    diff[:, :dh] = e1[ci]
    diff[:, dh:] = e2[cj]
    for p in range(m):
        diff[:, p * ds : (p + 1) * ds] -= books[p, c[:, p]]
    dists = np.einsum("ij,ij->i", diff, diff)
    return ids[idx], dists.astype(np.float32, copy=False)


def scan_local(vis_i, vis_j, starts, ends, ids, codes, e1, e2, books1, books2):
    idx, lens = _expand(starts, ends)
    n = idx.shape[0]
    m2 = books1.shape[1]
    ds = books1.shape[3]
    dh = e1.shape[1]
    if n == 0:
        return np.empty(0, np.uint32), np.empty(0, np.float32)
    ci = np.repeat(vis_i.astype(np.int64), lens)
    cj = np.repeat(vis_j.astype(np.int64), lens)
    c = codes[idx]
    diff = np.empty((n, 2 * dh), np.float32)
    diff[:, :dh] = e1[ci]
    diff[:, dh:] = e2[cj]
    for p in range(m2):
        diff[:, p * ds : (p + 1) * ds] -= books1[ci, p, c[:, p]]
    for p in range(m2):
        col = dh + p * ds
        diff[:, col : col + ds] -= books2[cj, p, c[:, m2 + p]]
    dists = np.einsum("ij,ij->i", diff, diff)
    return ids[idx], dists.astype(np.float32, copy=False)


def scan_tables(
    vis_i, vis_j, starts, ends, ids, codes, q_norm, qd1, qd2, cn1, cn2, fold, cross1, cross2
):
    idx, lens = _expand(starts, ends)
    n = idx.shape[0]
    if n == 0:
        return np.empty(0, np.uint32), np.empty(0, np.float32)
    ci = np.repeat(vis_i.astype(np.int64), lens)
    cj = np.repeat(vis_j.astype(np.int64), lens)
    c = codes[idx]
    m = fold.shape[0]
    m2 = m // 2
    dists = q_norm - 2.0 * (qd1[ci] + qd2[cj]) + cn1[ci] + cn2[cj]
    for p in range(m2):
        dists += fold[p, c[:, p]] + 2.0 * cross1[ci, p, c[:, p]]
    for p in range(m2, m):
        dists += fold[p, c[:, p]] + 2.0 * cross2[cj, p - m2, c[:, p]]
    np.maximum(dists, np.float32(0.0), out=dists)
    return ids[idx], dists.astype(np.float32, copy=False)
