"""Evaluation harness: recall, paired engine comparison, encoding error,
timing, and instrumented per-candidate operation counts.

The operation counters execute a literal per-candidate evaluation in plain
Python, incrementing a counter per table lookup and arithmetic op; they act
both as the complexity measurement (the primary signal, timings are
secondary) and as an independent oracle for the compiled kernels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fbpq as _fbpq
from . import hbpq as _hbpq
from . import multi_index as _mi
from .vecio import GroundTruth, as_matrix

ENGINE_BASELINE = "baseline"
ENGINE_FBPQ = "fbpq"
ENGINE_HBPQ = "hbpq"
ENGINES = (ENGINE_BASELINE, ENGINE_FBPQ, ENGINE_HBPQ)
DEFAULT_CUTOFFS = (1, 10, 100)


@dataclass
class OpCounts:
    """Per-scan operation tally over `candidates` candidate evaluations."""

    candidates: int = 0
    lookups: int = 0
    adds: int = 0
    muls: int = 0

    def total(self) -> int:
        return self.lookups + self.adds + self.muls

    def per_candidate(self) -> dict:
        n = max(self.candidates, 1)
        return {
            "lookups": self.lookups / n,
            "adds": self.adds / n,
            "muls": self.muls / n,
            "total": self.total() / n,
        }


class BaselineEngine:
    """Explicit-reconstruction reranking over a global-codebook index."""

    name = ENGINE_BASELINE

    def __init__(self, index: _mi.MultiIndex):
        if not isinstance(index, _mi.MultiIndex):
            raise TypeError("baseline engine requires a global-codebook MultiIndex")
        self.index = index

    def search(self, q, l: int, r: int):
        return _mi.search_baseline(self.index, q, l, r)

    def scan(self, q, l: int):
        return _mi.scan_baseline(self.index, q, l)

    def rerank_timed(self, q, l: int):
        """(candidates, seconds) with only the per-candidate scoring timed."""
        index = self.index
        qr, _, _, r1, r2 = _mi.coarse_scan(index.coarse, q)
        vis = _mi.traverse(index.cells, r1, r2, l)
        e1, e2 = _mi._query_displacement_tables(index.coarse, qr)
        from . import kernels

        t0 = time.perf_counter()
        ids, _ = kernels.scan_global(
            *vis, index.ids, index.codes, e1, e2, index.fine.codebooks
        )
        elapsed = time.perf_counter() - t0
        return ids.shape[0], elapsed

    def count_ops(self, q, l: int):
        """Instrumented pure-Python scan; returns (ids, dists, OpCounts)."""
        index = self.index
        qr, _, _, r1, r2 = _mi.coarse_scan(index.coarse, q)
        vis_i, vis_j, starts, ends = _mi.traverse(index.cells, r1, r2, l)
        e1, e2 = _mi._query_displacement_tables(index.coarse, qr)
        books = index.fine.codebooks
        m = index.num_parts
        m2 = m // 2
        ds = index.fine.sub_dim
        counts = OpCounts()
        out_ids, out_d = [], []
        for v in range(vis_i.shape[0]):
            i, j = vis_i[v], vis_j[v]
            for e in range(starts[v], ends[v]):
                acc = np.float32(0.0)
                for p in range(m):
                    c = index.codes[e, p]
                    half, cell = (e1, i) if p < m2 else (e2, j)
                    base = (p if p < m2 else p - m2) * ds
                    for u in range(ds):
                        # one codeword lookup, one query-displacement lookup,
                        # then sub, mul, add
                        d = half[cell, base + u] - books[p, c, u]
                        acc += d * d
                        counts.lookups += 2
                        counts.adds += 2
                        counts.muls += 1
                counts.candidates += 1
                out_ids.append(index.ids[e])
                out_d.append(acc)
        return np.array(out_ids, np.uint32), np.array(out_d, np.float32), counts


class FbpqEngine:
    """Table-based reranking; traversal identical to the baseline engine."""

    name = ENGINE_FBPQ

    def __init__(self, index: _mi.MultiIndex, tables: _fbpq.FbpqTables | None = None):
        if not isinstance(index, _mi.MultiIndex):
            raise TypeError("fbpq engine requires a global-codebook MultiIndex")
        self.index = index
        self.tables = tables if tables is not None else _fbpq.build_tables(index)

    def search(self, q, l: int, r: int):
        return _fbpq.search_fbpq(self.index, self.tables, q, l, r)

    def scan(self, q, l: int):
        return _fbpq.scan_fbpq(self.index, self.tables, q, l)

    def rerank_timed(self, q, l: int):
        index = self.index
        tables = self.tables
        state = _fbpq.prepare_query(index, tables, q)
        vis = _mi.traverse(index.cells, state.r1, state.r2, l)
        from . import kernels

        t0 = time.perf_counter()
        ids, _ = kernels.scan_tables(
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
        elapsed = time.perf_counter() - t0
        return ids.shape[0], elapsed

    def count_ops(self, q, l: int):
        index = self.index
        tables = self.tables
        state = _fbpq.prepare_query(index, tables, q)
        vis_i, vis_j, starts, ends = _mi.traverse(index.cells, state.r1, state.r2, l)
        m = index.num_parts
        m2 = m // 2
        counts = OpCounts()
        out_ids, out_d = [], []
        for v in range(vis_i.shape[0]):
            i, j = vis_i[v], vis_j[v]
            for e in range(starts[v], ends[v]):
                # 2 + m query-side lookups (coarse dots + folded fine table),
                # m + 2 norm/cross lookups, independent of the dimension.
                acc = state.q_norm - np.float32(2.0) * (
                    state.qdot_coarse1[i] + state.qdot_coarse2[j]
                )
                acc += tables.coarse_norms1[i] + tables.coarse_norms2[j]
                counts.lookups += 4
                counts.adds += 4
                counts.muls += 1
                for p in range(m):
                    c = index.codes[e, p]
                    acc += state.fold[p, c]
                    if p < m2:
                        acc += np.float32(2.0) * tables.cross1[i, p, c]
                    else:
                        acc += np.float32(2.0) * tables.cross2[j, p - m2, c]
                    counts.lookups += 2
                    counts.adds += 2
                    counts.muls += 1
                counts.candidates += 1
                out_ids.append(index.ids[e])
                out_d.append(max(acc, np.float32(0.0)))
        return np.array(out_ids, np.uint32), np.array(out_d, np.float32), counts


class HbpqEngine:
    """Local-codebook reranking over an HbpqIndex."""

    name = ENGINE_HBPQ

    def __init__(self, index: _hbpq.HbpqIndex):
        if not isinstance(index, _hbpq.HbpqIndex):
            raise TypeError("hbpq engine requires a local-codebook HbpqIndex")
        self.index = index

    def search(self, q, l: int, r: int):
        return _hbpq.search_hbpq(self.index, q, l, r)

    def scan(self, q, l: int):
        return _hbpq.scan_hbpq(self.index, q, l)

    def rerank_timed(self, q, l: int):
        index = self.index
        qr, _, _, r1, r2 = _mi.coarse_scan(index.coarse, q)
        vis = _mi.traverse(index.cells, r1, r2, l)
        dh = index.coarse.half_dim
        e1 = qr[None, :dh] - index.coarse.book1.centroids
        e2 = qr[None, dh:] - index.coarse.book2.centroids
        if index.bank.rot1 is not None:
            e1 = index.bank.rot1.rotate(e1)
        if index.bank.rot2 is not None:
            e2 = index.bank.rot2.rotate(e2)
        from . import kernels

        t0 = time.perf_counter()
        ids, _ = kernels.scan_local(
            *vis, index.ids, index.codes, e1, e2, index.bank.books1, index.bank.books2
        )
        elapsed = time.perf_counter() - t0
        return ids.shape[0], elapsed

    def count_ops(self, q, l: int):
        index = self.index
        qr, _, _, r1, r2 = _mi.coarse_scan(index.coarse, q)
        vis_i, vis_j, starts, ends = _mi.traverse(index.cells, r1, r2, l)
        dh = index.coarse.half_dim
        e1 = qr[None, :dh] - index.coarse.book1.centroids
        e2 = qr[None, dh:] - index.coarse.book2.centroids
        if index.bank.rot1 is not None:
            e1 = index.bank.rot1.rotate(e1)
        if index.bank.rot2 is not None:
            e2 = index.bank.rot2.rotate(e2)
        m2 = index.num_parts // 2
        ds = index.bank.sub_dim
        counts = OpCounts()
        out_ids, out_d = [], []
        for v in range(vis_i.shape[0]):
            i, j = vis_i[v], vis_j[v]
            for e in range(starts[v], ends[v]):
                acc = np.float32(0.0)
                for p in range(m2):
                    c = index.codes[e, p]
                    for u in range(ds):
                        d = e1[i, p * ds + u] - index.bank.books1[i, p, c, u]
                        acc += d * d
                        counts.lookups += 2
                        counts.adds += 2
                        counts.muls += 1
                for p in range(m2):
                    c = index.codes[e, m2 + p]
                    for u in range(ds):
                        d = e2[j, p * ds + u] - index.bank.books2[j, p, c, u]
                        acc += d * d
                        counts.lookups += 2
                        counts.adds += 2
                        counts.muls += 1
                counts.candidates += 1
                out_ids.append(index.ids[e])
                out_d.append(acc)
        return np.array(out_ids, np.uint32), np.array(out_d, np.float32), counts


def make_engine(index, kind: str, tables=None):
    """Engine for an index; raises on engine/index kind mismatches."""
    hbpq = isinstance(index, _hbpq.HbpqIndex)
    if kind == ENGINE_HBPQ:
        if not hbpq:
            raise ValueError("engine hbpq requires an index built with local codebooks")
        return HbpqEngine(index)
    if kind == ENGINE_FBPQ:
        if hbpq:
            raise ValueError("engine fbpq is incompatible with a local-codebook index")
        return FbpqEngine(index, tables)
    if kind == ENGINE_BASELINE:
        if hbpq:
            raise ValueError("engine baseline is incompatible with a local-codebook index")
        return BaselineEngine(index)
    raise ValueError(f"unknown engine {kind!r}")


@dataclass
class RecallReport:
    engine: str
    l: int
    num_queries: int
    recall: dict
    mean_query_ms: float = 0.0
    mean_candidates: float = 0.0

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "l": self.l,
            "num_queries": self.num_queries,
            "recall": {str(c): v for c, v in self.recall.items()},
            "mean_query_ms": self.mean_query_ms,
            "mean_candidates": self.mean_candidates,
        }


def recall_at(results, gt: GroundTruth, cutoffs=DEFAULT_CUTOFFS) -> dict:
    """Fraction of queries whose true nearest neighbor appears in the top c.

    `results` is a sequence of per-query ranked id arrays.
    """
    if len(results) != gt.num_queries:
        raise ValueError(
            f"result count {len(results)} does not match ground truth {gt.num_queries}"
        )
    true_nn = gt.ids[:, 0]
    out = {}
    for c in cutoffs:
        if c < 1:
            raise ValueError(f"cutoffs must be >= 1, got {c}")
        hits = sum(
            1 for qi, ids in enumerate(results) if true_nn[qi] in np.asarray(ids)[:c]
        )
        out[int(c)] = hits / max(gt.num_queries, 1)
    return out


def run_engine(engine, queries, l: int, r: int, gt: GroundTruth | None = None,
               cutoffs=DEFAULT_CUTOFFS):
    """Search all queries; returns (ranked id lists, RecallReport)."""
    xq = as_matrix(queries)
    results = []
    total_s = 0.0
    total_cands = 0
    for qi in range(xq.shape[0]):
        t0 = time.perf_counter()
        cand_ids, cand_d = engine.scan(xq[qi], l)
        ids, _ = _mi.select_top(cand_ids, cand_d, r)
        total_s += time.perf_counter() - t0
        results.append(ids)
        total_cands += cand_ids.shape[0]
    nq = max(xq.shape[0], 1)
    recall = recall_at(results, gt, cutoffs) if gt is not None else {}
    report = RecallReport(
        engine=engine.name,
        l=l,
        num_queries=xq.shape[0],
        recall=recall,
        mean_query_ms=1000.0 * total_s / nq,
        mean_candidates=total_cands / nq,
    )
    return results, report


@dataclass
class ComparisonReport:
    report_a: RecallReport
    report_b: RecallReport
    max_rel_deviation: float
    mean_rel_deviation: float

    def to_dict(self) -> dict:
        return {
            "a": self.report_a.to_dict(),
            "b": self.report_b.to_dict(),
            "max_rel_deviation": self.max_rel_deviation,
            "mean_rel_deviation": self.mean_rel_deviation,
        }


def compare_engines(engine_a, engine_b, queries, gt: GroundTruth, l: int,
                    r: int = 100, cutoffs=DEFAULT_CUTOFFS) -> ComparisonReport:
    """Paired run over the same queries and budget.

    Also scans both engines per query and reports the relative distance
    deviation over the shared candidates (aligned by point id; the floor of
    the denominator is 1e-6 times the squared query norm).  Raises if the
    two engines do not see the same candidate id set.
    """
    xq = as_matrix(queries)
    _, rep_a = run_engine(engine_a, xq, l, r, gt, cutoffs)
    _, rep_b = run_engine(engine_b, xq, l, r, gt, cutoffs)
    max_dev = 0.0
    dev_sum = 0.0
    dev_n = 0
    for qi in range(xq.shape[0]):
        ids_a, d_a = engine_a.scan(xq[qi], l)
        ids_b, d_b = engine_b.scan(xq[qi], l)
        oa = np.argsort(ids_a, kind="stable")
        ob = np.argsort(ids_b, kind="stable")
        if ids_a.shape != ids_b.shape or not np.array_equal(ids_a[oa], ids_b[ob]):
            raise ValueError(f"mismatched candidate sets between engines at query {qi}")
        if ids_a.shape[0] == 0:
            continue
        qn = float(np.float64(xq[qi]) @ np.float64(xq[qi]))
        denom = np.maximum(d_b[ob].astype(np.float64), 1e-6 * max(qn, 1e-30))
        rel = np.abs(d_a[oa].astype(np.float64) - d_b[ob].astype(np.float64)) / denom
        max_dev = max(max_dev, float(rel.max()))
        dev_sum += float(rel.sum())
        dev_n += rel.shape[0]
    return ComparisonReport(rep_a, rep_b, max_dev, dev_sum / max(dev_n, 1))


@dataclass
class EncodingScheme:
    """A named reconstruction closure plus its per-point code cost."""

    name: str
    code_bytes: int
    reconstruct: object


def global_scheme(coarse, fine) -> EncodingScheme:
    return EncodingScheme(
        name="global",
        code_bytes=4 + fine.num_parts,
        reconstruct=lambda xs: _mi.encode_reconstruct(coarse, fine, xs),
    )


def local_scheme(coarse, bank) -> EncodingScheme:
    return EncodingScheme(
        name="local",
        code_bytes=4 + bank.num_parts,
        reconstruct=lambda xs: _hbpq.encode_reconstruct_local(coarse, bank, xs),
    )


@dataclass
class ErrorReport:
    name: str
    code_bytes: int
    mse: float

    def to_dict(self) -> dict:
        return {"name": self.name, "code_bytes": self.code_bytes, "mse": self.mse}


def encoding_error(scheme: EncodingScheme, vectors) -> ErrorReport:
    """Mean squared reconstruction error of a scheme over a vector set."""
    data = as_matrix(vectors)
    rec = np.asarray(scheme.reconstruct(data), np.float32)
    if rec.shape != data.shape:
        raise ValueError("reconstruction shape does not match the input")
    diff = (data.astype(np.float64) - rec.astype(np.float64))
    return ErrorReport(scheme.name, scheme.code_bytes, float(np.mean(np.einsum("ij,ij->i", diff, diff))))


@dataclass
class TimingReport:
    engine: str
    l: int
    r: int
    repetitions: int
    mean_query_ms: float
    median_query_ms: float
    rerank_candidates_per_s: float
    ops_per_candidate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "l": self.l,
            "r": self.r,
            "repetitions": self.repetitions,
            "mean_query_ms": self.mean_query_ms,
            "median_query_ms": self.median_query_ms,
            "rerank_candidates_per_s": self.rerank_candidates_per_s,
            "ops_per_candidate": self.ops_per_candidate,
        }


def measure_rerank_throughput(engine, queries, l: int) -> float:
    """Candidate scoring throughput (candidates/second), traversal excluded."""
    xq = as_matrix(queries)
    total_n = 0
    total_s = 0.0
    for qi in range(xq.shape[0]):
        n, s = engine.rerank_timed(xq[qi], l)
        total_n += n
        total_s += s
    return total_n / max(total_s, 1e-12)


def time_search(engine, queries, l: int, r: int, repetitions: int = 3,
                count_budget: int = 256) -> TimingReport:
    """Single-threaded end-to-end timing with one warm-up repetition.

    Per-candidate operation counts come from the instrumented scan of the
    first query at a small budget; they, not the wall clock, are the
    primary complexity signal.
    """
    xq = as_matrix(queries)
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    for qi in range(xq.shape[0]):
        engine.search(xq[qi], l, r)
    per_rep = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for qi in range(xq.shape[0]):
            engine.search(xq[qi], l, r)
        per_rep.append((time.perf_counter() - t0) / max(xq.shape[0], 1))
    _, _, counts = engine.count_ops(xq[0], min(count_budget, l))
    throughput = measure_rerank_throughput(engine, xq, l)
    return TimingReport(
        engine=engine.name,
        l=l,
        r=r,
        repetitions=repetitions,
        mean_query_ms=1000.0 * float(np.mean(per_rep)),
        median_query_ms=1000.0 * float(np.median(per_rep)),
        rerank_candidates_per_s=throughput,
        ops_per_candidate=counts.per_candidate(),
    )
