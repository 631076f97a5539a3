"""Numba kernel implementations.

All kernels compile in nopython mode, run single-threaded and accumulate in
float32 to match the storage precision of the index.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def traverse_cells(sorted_r1, sorted_r2, order1, order2, offsets, budget):
    t = sorted_r1.shape[0]
    total_entries = offsets[offsets.shape[0] - 1]
    cap = budget if budget < total_entries else total_entries
    if cap > t * t:
        cap = t * t
    if cap < 1:
        cap = 1
    vis_i = np.empty(cap, np.int32)
    vis_j = np.empty(cap, np.int32)
    starts = np.empty(cap, np.int64)
    ends = np.empty(cap, np.int64)

    popped = np.zeros((t, t), np.uint8)
    # Min-heap ordered by (key, original i, original j).  The live frontier
    # holds at most one cell per row, so 2t + 4 slots never overflow.
    hcap = 2 * t + 4
    hkey = np.empty(hcap, np.float64)
    hoi = np.empty(hcap, np.int32)
    hoj = np.empty(hcap, np.int32)
    ha = np.empty(hcap, np.int32)
    hb = np.empty(hcap, np.int32)
    hn = 0

    # push (0, 0)
    hkey[0] = sorted_r1[0] + sorted_r2[0]
    hoi[0] = order1[0]
    hoj[0] = order2[0]
    ha[0] = 0
    hb[0] = 0
    hn = 1

    collected = np.int64(0)
    nvis = 0
    while hn > 0:
        key = hkey[0]
        oi = hoi[0]
        oj = hoj[0]
        a = ha[0]
        b = hb[0]
        # pop root
        hn -= 1
        if hn > 0:
            ck = hkey[hn]
            coi = hoi[hn]
            coj = hoj[hn]
            ca = ha[hn]
            cb = hb[hn]
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= hn:
                    break
                right = child + 1
                if right < hn:
                    if hkey[right] < hkey[child] or (
                        hkey[right] == hkey[child]
                        and (
                            hoi[right] < hoi[child]
                            or (hoi[right] == hoi[child] and hoj[right] < hoj[child])
                        )
                    ):
                        child = right
                if hkey[child] < ck or (
                    hkey[child] == ck
                    and (hoi[child] < coi or (hoi[child] == coi and hoj[child] < coj))
                ):
                    hkey[pos] = hkey[child]
                    hoi[pos] = hoi[child]
                    hoj[pos] = hoj[child]
                    ha[pos] = ha[child]
                    hb[pos] = hb[child]
                    pos = child
                else:
                    break
            hkey[pos] = ck
            hoi[pos] = coi
            hoj[pos] = coj
            ha[pos] = ca
            hb[pos] = cb

        popped[a, b] = 1
        lin = np.int64(oi) * t + oj
        s = offsets[lin]
        e = offsets[lin + 1]
        if e > s:
            vis_i[nvis] = oi
            vis_j[nvis] = oj
            starts[nvis] = s
            ends[nvis] = e
            nvis += 1
            collected += e - s

        for push_idx in range(2):
            if push_idx == 0:
                na = a + 1
                nb = b
                ok = na < t and (b == 0 or popped[na, b - 1] == 1)
            else:
                na = a
                nb = b + 1
                ok = nb < t and (a == 0 or popped[a - 1, nb] == 1)
            if ok:
                nkey = sorted_r1[na] + sorted_r2[nb]
                noi = order1[na]
                noj = order2[nb]
                pos = hn
                hn += 1
                while pos > 0:
                    parent = (pos - 1) // 2
                    if nkey < hkey[parent] or (
                        nkey == hkey[parent]
                        and (
                            noi < hoi[parent]
                            or (noi == hoi[parent] and noj < hoj[parent])
                        )
                    ):
                        hkey[pos] = hkey[parent]
                        hoi[pos] = hoi[parent]
                        hoj[pos] = hoj[parent]
                        ha[pos] = ha[parent]
                        hb[pos] = hb[parent]
                        pos = parent
                    else:
                        break
                hkey[pos] = nkey
                hoi[pos] = noi
                hoj[pos] = noj
                ha[pos] = na
                hb[pos] = nb

        if collected >= budget:
            break

    return vis_i[:nvis], vis_j[:nvis], starts[:nvis], ends[:nvis]


@njit(cache=True)
def scan_global(vis_i, vis_j, starts, ends, ids, codes, e1, e2, books):
    m = books.shape[0]
    ds = books.shape[2]
    m2 = m // 2
    total = np.int64(0)
    for v in range(starts.shape[0]):
        total += ends[v] - starts[v]
    out_ids = np.empty(total, np.uint32)
    out_d = np.empty(total, np.float32)
    pos = 0
    for v in range(vis_i.shape[0]):
        i = vis_i[v]
        j = vis_j[v]
        for e in range(starts[v], ends[v]):
            acc = np.float32(0.0)
            for p in range(m2):
                c = codes[e, p]
                base = p * ds
                for u in range(ds):
                    d = e1[i, base + u] - books[p, c, u]
                    acc += d * d
            for p in range(m2, m):
                c = codes[e, p]
                base = (p - m2) * ds
                for u in range(ds):
                    d = e2[j, base + u] - books[p, c, u]
                    acc += d * d
            out_ids[pos] = ids[e]
            out_d[pos] = acc
            pos += 1
    return out_ids, out_d


@njit(cache=True)
def scan_local(vis_i, vis_j, starts, ends, ids, codes, e1, e2, books1, books2):
    m2 = books1.shape[1]
    ds = books1.shape[3]
    total = np.int64(0)
    for v in range(starts.shape[0]):
        total += ends[v] - starts[v]
    out_ids = np.empty(total, np.uint32)
    out_d = np.empty(total, np.float32)
    pos = 0
    for v in range(vis_i.shape[0]):
        i = vis_i[v]
        j = vis_j[v]
        for e in range(starts[v], ends[v]):
            acc = np.float32(0.0)
            for p in range(m2):
                c = codes[e, p]
                base = p * ds
                for u in range(ds):
                    d = e1[i, base + u] - books1[i, p, c, u]
                    acc += d * d
            for p in range(m2):
                c = codes[e, m2 + p]
                base = p * ds
                for u in range(ds):
                    d = e2[j, base + u] - books2[j, p, c, u]
                    acc += d * d
            out_ids[pos] = ids[e]
            out_d[pos] = acc
            pos += 1
    return out_ids, out_d


@njit(cache=True)
def scan_tables(
    vis_i, vis_j, starts, ends, ids, codes, q_norm, qd1, qd2, cn1, cn2, fold, cross1, cross2
):
    m = fold.shape[0]
    m2 = m // 2
    two = np.float32(2.0)
    total = np.int64(0)
    for v in range(starts.shape[0]):
        total += ends[v] - starts[v]
    out_ids = np.empty(total, np.uint32)
    out_d = np.empty(total, np.float32)
    pos = 0
    for v in range(vis_i.shape[0]):
        i = vis_i[v]
        j = vis_j[v]
        cell_base = q_norm - two * (qd1[i] + qd2[j]) + cn1[i] + cn2[j]
        for e in range(starts[v], ends[v]):
            acc = cell_base
            for p in range(m2):
                c = codes[e, p]
                acc += fold[p, c] + two * cross1[i, p, c]
            for p in range(m2, m):
                c = codes[e, p]
                acc += fold[p, c] + two * cross2[j, p - m2, c]
            if acc < np.float32(0.0):
                acc = np.float32(0.0)
            out_ids[pos] = ids[e]
            out_d[pos] = acc
            pos += 1
    return out_ids, out_d
