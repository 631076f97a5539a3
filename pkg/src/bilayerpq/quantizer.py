"""Single-layer quantizers.

k-means codebooks, product quantization over contiguous subvector parts, a
rotation-optimized PQ variant, and asymmetric distance tables.  All
distances here and everywhere downstream are squared Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import make_rng, seed_sequence
from .vecio import as_matrix

DEFAULT_KMEANS_ITERS = 25
_REL_TOL = 1e-5


@dataclass(eq=False)
class Codebook:
    """A set of centroids, shape (size, dim) float32."""

    centroids: np.ndarray

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, np.float32)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError("centroids must be a non-empty 2-d array")

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(eq=False)
class PqCodec:
    """Product quantizer: num_parts codebooks over contiguous subvectors.

    codebooks has shape (num_parts, size, sub_dim) float32; part p encodes
    vector slice [p * sub_dim, (p + 1) * sub_dim).
    """

    codebooks: np.ndarray

    def __post_init__(self):
        self.codebooks = np.ascontiguousarray(self.codebooks, np.float32)
        if self.codebooks.ndim != 3:
            raise ValueError("codebooks must have shape (parts, size, sub_dim)")

    @property
    def num_parts(self) -> int:
        return self.codebooks.shape[0]

    @property
    def size(self) -> int:
        return self.codebooks.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[0] * self.codebooks.shape[2]

    def book(self, part: int) -> Codebook:
        return Codebook(self.codebooks[part])


@dataclass(eq=False)
class Rotation:
    """An orthogonal matrix applied to row vectors as y = x @ matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, np.float32)
        d = self.matrix.shape[0]
        if self.matrix.ndim != 2 or self.matrix.shape[1] != d:
            raise ValueError("rotation matrix must be square")
        gram = self.matrix.astype(np.float64).T @ self.matrix.astype(np.float64)
        if np.abs(gram - np.eye(d)).max() > 1e-4:
            raise ValueError("rotation matrix is not orthogonal within 1e-4")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def rotate(self, xs: np.ndarray) -> np.ndarray:
        return np.asarray(xs, np.float32) @ self.matrix

    def unrotate(self, xs: np.ndarray) -> np.ndarray:
        return np.asarray(xs, np.float32) @ self.matrix.T


@dataclass(eq=False)
class AdcTable:
    """Per-part squared distances from one query to every codeword, (parts, size)."""

    entries: np.ndarray


def nearest_centroids(xs: np.ndarray, centroids: np.ndarray, block: int = 16384):
    """Nearest centroid id and squared distance per row.

    Ties break toward the lower centroid id.  Returns (int64 ids, float32
    distances).
    """
    xs = np.ascontiguousarray(xs, np.float32)
    cents = np.ascontiguousarray(centroids, np.float32)
    cn = np.einsum("ij,ij->i", cents, cents)
    n = xs.shape[0]
    ids = np.empty(n, np.int64)
    d2 = np.empty(n, np.float32)
    for s in range(0, n, block):
        e = min(s + block, n)
        chunk = xs[s:e]
        scores = cn[None, :] - 2.0 * (chunk @ cents.T)
        idx = np.argmin(scores, axis=1)
        ids[s:e] = idx
        xn = np.einsum("ij,ij->i", chunk, chunk)
        d2[s:e] = scores[np.arange(e - s), idx] + xn
    np.maximum(d2, np.float32(0.0), out=d2)
    return ids, d2


def _kmeanspp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]), np.float32)
    first = int(rng.integers(n))
    centroids[0] = data[first]
    diff = data - centroids[0]
    d2 = np.einsum("ij,ij->i", diff, diff, dtype=np.float64)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[c] = data[pick]
        diff = data - centroids[c]
        nd = np.einsum("ij,ij->i", diff, diff, dtype=np.float64)
        np.minimum(d2, nd, out=d2)
    return centroids


def _lloyd(data: np.ndarray, centroids: np.ndarray, max_iters: int) -> np.ndarray:
    """Lloyd iterations from a given init.

    Empty clusters are reassigned to the points with the largest residual;
    stops early when the relative objective improvement drops below 1e-5.
    """
    k = centroids.shape[0]
    centroids = np.array(centroids, np.float32, copy=True)
    prev = None
    for _ in range(max_iters):
        idx, d2 = nearest_centroids(data, centroids)
        obj = float(d2.sum(dtype=np.float64))
        if prev is not None and prev - obj < _REL_TOL * max(prev, 1e-30):
            break
        prev = obj
        counts = np.bincount(idx, minlength=k)
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_idx)) + 1))
        sums = np.add.reduceat(data[order].astype(np.float64), starts, axis=0)
        present = sorted_idx[starts]
        centroids[present] = (sums / counts[present, None]).astype(np.float32)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            far = np.argsort(-d2, kind="stable")[: empties.size]
            centroids[empties] = data[far]
    return centroids


def kmeans_train(points, k: int, max_iters: int = DEFAULT_KMEANS_ITERS, seed: int = 0) -> Codebook:
    """k-means codebook with k-means++ seeding.

    Deterministic for a fixed seed.  Requires 1 <= k <= point count; with
    k equal to the number of distinct points the centroids converge to the
    points themselves.
    """
    data = as_matrix(points)
    _check_kmeans_args(data, k, max_iters)
    return Codebook(_kmeans(data, k, max_iters, make_rng(seed)))


def _check_kmeans_args(data: np.ndarray, k: int, max_iters: int) -> None:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > data.shape[0]:
        raise ValueError(f"k ({k}) exceeds the number of points ({data.shape[0]})")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")


def _kmeans(data: np.ndarray, k: int, max_iters: int, rng: np.random.Generator) -> np.ndarray:
    return _lloyd(data, _kmeanspp_init(data, k, rng), max_iters)


def vq_assign(book: Codebook, x: np.ndarray) -> int:
    """Index of the nearest codeword; ties break toward the lower id."""
    xs = np.asarray(x, np.float32).reshape(1, -1)
    if xs.shape[1] != book.dim:
        raise ValueError(f"dimension mismatch: vector {xs.shape[1]}, codebook {book.dim}")
    ids, _ = nearest_centroids(xs, book.centroids)
    return int(ids[0])


def _part_slices(dim: int, m: int):
    if m < 1 or dim % m != 0:
        raise ValueError(f"dim {dim} is not divisible into {m} parts")
    ds = dim // m
    return [(p * ds, (p + 1) * ds) for p in range(m)]


def pq_train(points, m: int, k: int, max_iters: int = DEFAULT_KMEANS_ITERS, seed: int = 0) -> PqCodec:
    """Independent k-means per contiguous subvector part."""
    data = as_matrix(points)
    slices = _part_slices(data.shape[1], m)
    _check_kmeans_args(data, k, max_iters)
    books = np.empty((m, k, data.shape[1] // m), np.float32)
    for p, (s, e) in enumerate(slices):
        rng = np.random.default_rng(seed_sequence(seed, 1, p))
        books[p] = _kmeans(np.ascontiguousarray(data[:, s:e]), k, max_iters, rng)
    return PqCodec(books)


def pq_encode_batch(codec: PqCodec, xs: np.ndarray) -> np.ndarray:
    """Per-part nearest codeword ids, shape (n, num_parts) int32."""
    data = np.ascontiguousarray(np.atleast_2d(np.asarray(xs, np.float32)))
    if data.shape[1] != codec.dim:
        raise ValueError(f"dimension mismatch: vectors {data.shape[1]}, codec {codec.dim}")
    ds = codec.sub_dim
    codes = np.empty((data.shape[0], codec.num_parts), np.int32)
    for p in range(codec.num_parts):
        ids, _ = nearest_centroids(
            np.ascontiguousarray(data[:, p * ds : (p + 1) * ds]), codec.codebooks[p]
        )
        codes[:, p] = ids
    return codes


def pq_encode(codec: PqCodec, x: np.ndarray) -> np.ndarray:
    return pq_encode_batch(codec, np.asarray(x, np.float32).reshape(1, -1))[0]


def pq_decode_batch(codec: PqCodec, codes: np.ndarray) -> np.ndarray:
    codes = np.atleast_2d(np.asarray(codes))
    if codes.shape[1] != codec.num_parts:
        raise ValueError("code width does not match the number of parts")
    out = np.empty((codes.shape[0], codec.dim), np.float32)
    ds = codec.sub_dim
    for p in range(codec.num_parts):
        out[:, p * ds : (p + 1) * ds] = codec.codebooks[p, codes[:, p]]
    return out


def pq_decode(codec: PqCodec, code: np.ndarray) -> np.ndarray:
    return pq_decode_batch(codec, np.asarray(code).reshape(1, -1))[0]


def pq_reconstruction_error(codec: PqCodec, xs: np.ndarray) -> float:
    """Mean squared reconstruction error of encode followed by decode."""
    data = np.atleast_2d(np.asarray(xs, np.float32))
    rec = pq_decode_batch(codec, pq_encode_batch(codec, data))
    diff = (data - rec).astype(np.float64)
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


def _pq_one_round(codec: PqCodec, data: np.ndarray) -> PqCodec:
    """One reassign-and-update round per part at a fixed rotation."""
    ds = codec.sub_dim
    books = np.empty_like(codec.codebooks)
    for p in range(codec.num_parts):
        part = np.ascontiguousarray(data[:, p * ds : (p + 1) * ds])
        books[p] = _lloyd(part, codec.codebooks[p], 1)
    return PqCodec(books)


def opq_train(points, m: int, k: int, outer_iters: int = 20, seed: int = 0):
    """Jointly learn an orthogonal rotation and a product quantizer.

    Alternates a Procrustes solve (codes fixed) with one k-means round per
    part (rotation fixed), starting from the identity rotation and a plain
    pq_train codebook, so the rotated reconstruction error never exceeds
    the unrotated PQ baseline.  Returns (Rotation, PqCodec); the codec
    lives in the rotated space.
    """
    data = as_matrix(points)
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    d = data.shape[1]
    codec = pq_train(data, m, k, DEFAULT_KMEANS_ITERS, seed)
    rot = np.eye(d, dtype=np.float32)
    rotated = data
    for _ in range(outer_iters):
        rec = pq_decode_batch(codec, pq_encode_batch(codec, rotated))
        cross = data.astype(np.float64).T @ rec.astype(np.float64)
        u, _, vt = np.linalg.svd(cross)
        rot = (u @ vt).astype(np.float32)
        rotated = data @ rot
        codec = _pq_one_round(codec, rotated)
    return Rotation(rot), codec


def adc_build(codec: PqCodec, q: np.ndarray) -> AdcTable:
    """Squared distance from each query subvector to every codeword."""
    qv = np.asarray(q, np.float32).reshape(-1)
    if qv.shape[0] != codec.dim:
        raise ValueError(f"dimension mismatch: query {qv.shape[0]}, codec {codec.dim}")
    ds = codec.sub_dim
    entries = np.empty((codec.num_parts, codec.size), np.float32)
    for p in range(codec.num_parts):
        diff = qv[None, p * ds : (p + 1) * ds] - codec.codebooks[p]
        entries[p] = np.einsum("ij,ij->i", diff, diff)
    return AdcTable(entries)


def adc_distance(table: AdcTable, code: np.ndarray) -> float:
    code = np.asarray(code).reshape(-1)
    m = table.entries.shape[0]
    if code.shape[0] != m:
        raise ValueError("code width does not match the table")
    total = np.float32(0.0)
    for p in range(m):
        total += table.entries[p, code[p]]
    return float(total)


def adc_distance_batch(table: AdcTable, codes: np.ndarray) -> np.ndarray:
    codes = np.atleast_2d(np.asarray(codes))
    total = np.zeros(codes.shape[0], np.float32)
    for p in range(table.entries.shape[0]):
        total += table.entries[p, codes[:, p]]
    return total
