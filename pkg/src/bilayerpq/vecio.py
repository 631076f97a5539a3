"""Vector dataset I/O, synthetic data generation, and the exact search oracle.

File formats follow the common prefixed-record layout: each record starts
with a 4-byte little-endian int32 component count followed by the
components.  ``f32-vec`` stores float32 components, ``u8-vec`` stores raw
bytes (widened to float32 on load), ``i32-vec`` stores int32 components.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import make_rng

FORMAT_F32 = "f32-vec"
FORMAT_U8 = "u8-vec"
FORMAT_I32 = "i32-vec"

_ELEM_DTYPE = {FORMAT_F32: "<f4", FORMAT_U8: "u1", FORMAT_I32: "<i4"}
_ELEM_WIDTH = {FORMAT_F32: 4, FORMAT_U8: 1, FORMAT_I32: 4}
_SUFFIX_FORMAT = {".fvecs": FORMAT_F32, ".bvecs": FORMAT_U8, ".ivecs": FORMAT_I32}


class VecFormatError(ValueError):
    """Raised for malformed vector files and invalid write requests."""


class DenseVectorSet:
    """N vectors of one dimension, stored row-major as float32.

    Wraps a (count, dim) C-contiguous float32 array.  All values are
    checked finite on construction.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("vector dimension must be >= 1")
        if not np.isfinite(arr).all():
            raise ValueError("vector data contains NaN or Inf")
        self.data = arr

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return self.data.shape[0]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"DenseVectorSet(count={self.count}, dim={self.dim})"


def as_matrix(vectors) -> np.ndarray:
    """Accept a DenseVectorSet or array-like, return a float32 matrix."""
    if isinstance(vectors, DenseVectorSet):
        return vectors.data
    return DenseVectorSet(np.atleast_2d(np.asarray(vectors))).data


@dataclass(frozen=True)
class GroundTruth:
    """Exact k-nearest-neighbor ids and squared distances per query.

    ids: (num_queries, k) int64, distances: (num_queries, k) float64 with
    non-decreasing rows.
    """

    ids: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        if self.ids.shape != self.distances.shape or self.ids.ndim != 2:
            raise ValueError("ids and distances must share a (queries, k) shape")
        if np.any(np.diff(self.distances, axis=1) < 0):
            raise ValueError("distances must be non-decreasing along each row")

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    @property
    def num_queries(self) -> int:
        return self.ids.shape[0]


def infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix not in _SUFFIX_FORMAT:
        raise VecFormatError(f"cannot infer vector format from suffix {suffix!r}")
    return _SUFFIX_FORMAT[suffix]


def _read_records(path, fmt: str, limit: int | None) -> np.ndarray:
    """Parse a prefixed-record file; returns values in the element dtype."""
    if fmt not in _ELEM_DTYPE:
        raise VecFormatError(f"unknown vector format {fmt!r}")
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise VecFormatError(f"empty input: {path}")
    if len(raw) < 4:
        raise VecFormatError(f"truncated input at byte 0: {path}")
    dim = int(np.frombuffer(raw, "<i4", count=1)[0])
    if dim < 1:
        raise VecFormatError(f"bad component count {dim} in record 0: {path}")
    rec_size = 4 + dim * _ELEM_WIDTH[fmt]
    n, tail = divmod(len(raw), rec_size)
    if tail:
        raise VecFormatError(f"truncated input at byte {n * rec_size}: {path}")
    if limit is not None:
        if limit < 1:
            raise VecFormatError(f"limit must be >= 1, got {limit}")
        n = min(n, limit)
    recs = np.frombuffer(
        raw, dtype=np.dtype([("d", "<i4"), ("v", _ELEM_DTYPE[fmt], (dim,))]), count=n
    )
    dims = recs["d"]
    if not np.all(dims == dim):
        bad = int(np.argmin(dims == dim))
        raise VecFormatError(
            f"inconsistent component count in record {bad}: "
            f"expected {dim}, got {int(dims[bad])}: {path}"
        )
    return recs["v"]


def read_vectors(path, fmt: str | None = None, limit: int | None = None) -> DenseVectorSet:
    """Read a prefixed-record vector file into a DenseVectorSet.

    Args:
        path: input file.
        fmt: one of f32-vec / u8-vec / i32-vec; inferred from the suffix
            when omitted.
        limit: optional cap on the number of records read.
    """
    if fmt is None:
        fmt = infer_format(path)
    values = _read_records(path, fmt, limit).astype(np.float32)
    try:
        return DenseVectorSet(values)
    except ValueError as exc:
        raise VecFormatError(f"{exc}: {path}") from exc


def read_ground_truth(path, limit: int | None = None) -> GroundTruth:
    """Read per-query ranked neighbor ids from an i32-vec file.

    Ids stay exact integers end to end.  Distances are not stored in the
    file and come back as zeros.
    """
    ids = _read_records(path, FORMAT_I32, limit).astype(np.int64)
    if np.any(ids < 0):
        raise VecFormatError(f"negative neighbor id in ground truth: {path}")
    return GroundTruth(ids, np.zeros(ids.shape, np.float64))


def write_vectors(vectors: DenseVectorSet, path, fmt: str | None = None) -> None:
    """Write a DenseVectorSet in the prefixed-record layout."""
    if fmt is None:
        fmt = infer_format(path)
    if fmt not in _ELEM_DTYPE:
        raise VecFormatError(f"unknown vector format {fmt!r}")
    data = as_matrix(vectors)
    if data.shape[0] == 0:
        raise VecFormatError("empty input: refusing to write a set with zero vectors")
    if fmt == FORMAT_U8:
        if data.min() < 0 or data.max() > 255:
            raise VecFormatError("u8-vec write requires values within [0, 255]")
        payload = data.astype(np.uint8)
    elif fmt == FORMAT_I32:
        payload = data.astype("<i4")
    else:
        payload = data.astype("<f4")
    n, dim = data.shape
    recs = np.empty(n, dtype=np.dtype([("d", "<i4"), ("v", payload.dtype, (dim,))]))
    recs["d"] = dim
    recs["v"] = payload
    Path(path).write_bytes(recs.tobytes())


def generate_clustered(
    num_clusters: int, per_cluster: int, dim: int, spread: float, seed: int = 0
) -> DenseVectorSet:
    """Isotropic Gaussian clusters around uniform centers in [0, 1]^dim.

    Returns num_clusters * per_cluster vectors, cluster-contiguous.
    Deterministic for a fixed seed; spread 0 yields exact duplicates of the
    centers.
    """
    if num_clusters < 1 or per_cluster < 1 or dim < 1:
        raise ValueError("num_clusters, per_cluster and dim must be >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = make_rng(seed)
    centers = rng.random((num_clusters, dim))
    noise = rng.normal(0.0, 1.0, size=(num_clusters * per_cluster, dim)) * spread
    points = np.repeat(centers, per_cluster, axis=0) + noise
    return DenseVectorSet(points)


def generate_anisotropic_clustered(
    num_clusters: int,
    per_cluster: int,
    dim: int,
    spread: float,
    seed: int = 0,
    anisotropy: float = 4.0,
) -> DenseVectorSet:
    """Gaussian clusters with a random per-cluster covariance shape.

    Each cluster scales its axes by spread * anisotropy**u, u ~ U[-1, 1],
    then mixes them through a random orthogonal basis, so within-cluster
    distributions differ from cluster to cluster.
    """
    if num_clusters < 1 or per_cluster < 1 or dim < 1:
        raise ValueError("num_clusters, per_cluster and dim must be >= 1")
    if spread < 0 or anisotropy < 1:
        raise ValueError("spread must be >= 0 and anisotropy >= 1")
    rng = make_rng(seed)
    centers = rng.random((num_clusters, dim))
    out = np.empty((num_clusters * per_cluster, dim), np.float64)
    for c in range(num_clusters):
        scales = spread * anisotropy ** rng.uniform(-1.0, 1.0, size=dim)
        basis, _ = np.linalg.qr(rng.normal(0.0, 1.0, size=(dim, dim)))
        pts = rng.normal(0.0, 1.0, size=(per_cluster, dim)) * scales
        out[c * per_cluster : (c + 1) * per_cluster] = pts @ basis + centers[c]
    return DenseVectorSet(out)


def _select_topk_row(row: np.ndarray, k: int):
    """Indices of the k smallest values, ties broken by lower index."""
    n = row.shape[0]
    if k < n:
        part = np.argpartition(row, k - 1)[:k]
        thresh = row[part].max()
        cand = np.flatnonzero(row <= thresh)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, row[cand]))
    return cand[order[:k]]


def brute_force_knn(base, queries, k: int) -> GroundTruth:
    """Exact squared-L2 k-nearest-neighbors of each query over the base set.

    Distances are accumulated in float64; ties break toward the smaller
    point id.  Deterministic regardless of internal blocking.
    """
    xb = as_matrix(base)
    xq = as_matrix(queries)
    if xb.shape[1] != xq.shape[1]:
        raise ValueError(f"dimension mismatch: base {xb.shape[1]}, queries {xq.shape[1]}")
    n = xb.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    bn = np.einsum("ij,ij->i", xb, xb, dtype=np.float64)
    out_ids = np.empty((xq.shape[0], k), np.int64)
    out_d = np.empty((xq.shape[0], k), np.float64)
    qblock = max(1, int(2.0e8 / (8 * max(n, 1))))
    bblock = 65536
    for qs in range(0, xq.shape[0], qblock):
        qe = min(qs + qblock, xq.shape[0])
        qb = xq[qs:qe].astype(np.float64)
        qn = np.einsum("ij,ij->i", qb, qb)
        d2 = np.empty((qe - qs, n), np.float64)
        for bs in range(0, n, bblock):
            be = min(bs + bblock, n)
            d2[:, bs:be] = qb @ xb[bs:be].astype(np.float64).T
        d2 *= -2.0
        d2 += qn[:, None]
        d2 += bn[None, :]
        np.maximum(d2, 0.0, out=d2)
        for r in range(qe - qs):
            sel = _select_topk_row(d2[r], k)
            out_ids[qs + r] = sel
            out_d[qs + r] = d2[r, sel]
    return GroundTruth(ids=out_ids, distances=out_d)
