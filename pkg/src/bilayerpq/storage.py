"""Binary persistence for codebooks, indexes and derived tables.

Three containers, all little-endian with fixed field order so serialization
is deterministic and round-trips are bit-exact:

* ``BPQC``: codebooks, PQ codecs, rotations, coarse pairs, local banks
  (a kind tag selects the payload layout),
* ``BPQI``: a built index, either global-codebook or local-codebook
  (selected by a header flag),
* ``BPQT``: cached query-independent reranking tables.

Every file starts with a 4-byte magic and a u32 format version; unknown
magics, versions, truncation and trailing bytes all raise StorageError.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .fbpq import FbpqTables
from .hbpq import HbpqIndex, LocalCodebookBank
from .multi_index import CellTable, CoarsePair, MultiIndex
from .quantizer import Codebook, PqCodec, Rotation

MAGIC_CODEBOOK = b"BPQC"
MAGIC_INDEX = b"BPQI"
MAGIC_TABLES = b"BPQT"
FORMAT_VERSION = 1

_KIND_CODEBOOK = 0
_KIND_CODEC = 1
_KIND_ROTATION = 2
_KIND_COARSE_PAIR = 3
_KIND_BANK = 4

_FLAG_ROTATED = 1
_FLAG_HBPQ = 2


class StorageError(ValueError):
    """Raised for malformed, truncated or mismatched binary files."""


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise StorageError(f"truncated file at byte {self.pos}: {self.path}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype, shape) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 0
        arr = np.frombuffer(self.take(count * dt.itemsize), dtype=dt)
        return arr.reshape(shape).copy()

    def expect_end(self) -> None:
        if self.pos != len(self.raw):
            raise StorageError(
                f"trailing bytes after record end at byte {self.pos}: {self.path}"
            )


def _open(path, magic: bytes) -> _Reader:
    raw = Path(path).read_bytes()
    rd = _Reader(raw, path)
    got = rd.take(4)
    if got != magic:
        raise StorageError(f"bad magic {got!r}, expected {magic!r}: {path}")
    version = rd.u32()
    if version != FORMAT_VERSION:
        raise StorageError(f"unsupported format version {version}: {path}")
    return rd


def _u32(v: int) -> bytes:
    return struct.pack("<I", v)


def _u64(v: int) -> bytes:
    return struct.pack("<Q", v)


def _f32_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, "<f4").tobytes()


def _codebook_header(kind: int) -> bytes:
    return MAGIC_CODEBOOK + _u32(FORMAT_VERSION) + _u32(kind)


def _check_kind(rd: _Reader, expected: int) -> None:
    kind = rd.u32()
    if kind != expected:
        raise StorageError(f"wrong record kind {kind}, expected {expected}: {rd.path}")


def save_codebook(book: Codebook, path) -> None:
    payload = _codebook_header(_KIND_CODEBOOK)
    payload += _u32(book.size) + _u32(book.dim)
    payload += _f32_bytes(book.centroids)
    atomic_write_bytes(path, payload)


def load_codebook(path) -> Codebook:
    rd = _open(path, MAGIC_CODEBOOK)
    _check_kind(rd, _KIND_CODEBOOK)
    size = rd.u32()
    dim = rd.u32()
    book = Codebook(rd.array("<f4", (size, dim)))
    rd.expect_end()
    return book


def save_codec(codec: PqCodec, path) -> None:
    payload = _codebook_header(_KIND_CODEC)
    payload += _u32(codec.num_parts) + _u32(codec.size) + _u32(codec.sub_dim)
    payload += _f32_bytes(codec.codebooks)
    atomic_write_bytes(path, payload)


def load_codec(path) -> PqCodec:
    rd = _open(path, MAGIC_CODEBOOK)
    _check_kind(rd, _KIND_CODEC)
    m = rd.u32()
    k = rd.u32()
    ds = rd.u32()
    codec = PqCodec(rd.array("<f4", (m, k, ds)))
    rd.expect_end()
    return codec


def save_rotation(rot: Rotation, path) -> None:
    payload = _codebook_header(_KIND_ROTATION)
    payload += _u32(rot.dim)
    payload += _f32_bytes(rot.matrix)
    atomic_write_bytes(path, payload)


def load_rotation(path) -> Rotation:
    rd = _open(path, MAGIC_CODEBOOK)
    _check_kind(rd, _KIND_ROTATION)
    d = rd.u32()
    rot = Rotation(rd.array("<f4", (d, d)))
    rd.expect_end()
    return rot


def _coarse_pair_bytes(coarse: CoarsePair) -> bytes:
    payload = _u32(coarse.size) + _u32(coarse.half_dim)
    payload += _u32(1 if coarse.rotation is not None else 0)
    payload += _f32_bytes(coarse.book1.centroids)
    payload += _f32_bytes(coarse.book2.centroids)
    if coarse.rotation is not None:
        payload += _f32_bytes(coarse.rotation.matrix)
    return payload


def _read_coarse_pair(rd: _Reader) -> CoarsePair:
    t = rd.u32()
    dh = rd.u32()
    has_rot = rd.u32()
    book1 = Codebook(rd.array("<f4", (t, dh)))
    book2 = Codebook(rd.array("<f4", (t, dh)))
    rotation = Rotation(rd.array("<f4", (2 * dh, 2 * dh))) if has_rot else None
    return CoarsePair(book1, book2, rotation)


def save_coarse_pair(coarse: CoarsePair, path) -> None:
    atomic_write_bytes(path, _codebook_header(_KIND_COARSE_PAIR) + _coarse_pair_bytes(coarse))


def load_coarse_pair(path) -> CoarsePair:
    rd = _open(path, MAGIC_CODEBOOK)
    _check_kind(rd, _KIND_COARSE_PAIR)
    coarse = _read_coarse_pair(rd)
    rd.expect_end()
    return coarse


def _bank_bytes(bank: LocalCodebookBank) -> bytes:
    t, m2, k, ds = bank.books1.shape
    payload = _u32(t) + _u32(m2) + _u32(k) + _u32(ds)
    payload += _u32(1 if bank.rot1 is not None else 0)
    payload += _u32(1 if bank.rot2 is not None else 0)
    payload += _f32_bytes(bank.books1)
    payload += _f32_bytes(bank.books2)
    if bank.rot1 is not None:
        payload += _f32_bytes(bank.rot1.matrix)
    if bank.rot2 is not None:
        payload += _f32_bytes(bank.rot2.matrix)
    return payload


def _read_bank(rd: _Reader) -> LocalCodebookBank:
    t = rd.u32()
    m2 = rd.u32()
    k = rd.u32()
    ds = rd.u32()
    has1 = rd.u32()
    has2 = rd.u32()
    books1 = rd.array("<f4", (t, m2, k, ds))
    books2 = rd.array("<f4", (t, m2, k, ds))
    dh = m2 * ds
    rot1 = Rotation(rd.array("<f4", (dh, dh))) if has1 else None
    rot2 = Rotation(rd.array("<f4", (dh, dh))) if has2 else None
    return LocalCodebookBank(books1, books2, rot1, rot2)


def save_bank(bank: LocalCodebookBank, path) -> None:
    atomic_write_bytes(path, _codebook_header(_KIND_BANK) + _bank_bytes(bank))


def load_bank(path) -> LocalCodebookBank:
    rd = _open(path, MAGIC_CODEBOOK)
    _check_kind(rd, _KIND_BANK)
    bank = _read_bank(rd)
    rd.expect_end()
    return bank


def index_to_bytes(index) -> bytes:
    """Serialize a MultiIndex or HbpqIndex into the BPQI layout."""
    hbpq = isinstance(index, HbpqIndex)
    if not hbpq and not isinstance(index, MultiIndex):
        raise TypeError(f"cannot serialize {type(index).__name__} as an index")
    coarse = index.coarse
    flags = 0
    if coarse.rotation is not None:
        flags |= _FLAG_ROTATED
    if hbpq:
        flags |= _FLAG_HBPQ
    m = index.num_parts
    k = index.codebook_size
    payload = MAGIC_INDEX + _u32(FORMAT_VERSION)
    payload += _u32(index.dim) + _u32(index.num_coarse) + _u32(m) + _u32(k)
    payload += _u32(flags) + _u64(index.num_points)
    payload += _coarse_pair_bytes(coarse)
    payload += np.ascontiguousarray(index.cells.offsets, "<i8").tobytes()
    payload += np.ascontiguousarray(index.ids, "<u4").tobytes()
    payload += np.ascontiguousarray(index.codes, "u1").tobytes()
    if hbpq:
        payload += _bank_bytes(index.bank)
    else:
        payload += _f32_bytes(index.fine.codebooks)
    return payload


def save_index(index, path) -> None:
    atomic_write_bytes(path, index_to_bytes(index))


def read_index_header(path) -> dict:
    """Header fields of a BPQI file without loading the payload."""
    rd = _open(path, MAGIC_INDEX)
    d = rd.u32()
    t = rd.u32()
    m = rd.u32()
    k = rd.u32()
    flags = rd.u32()
    n = rd.u64()
    return {
        "dim": d,
        "num_coarse": t,
        "num_parts": m,
        "codebook_size": k,
        "optimized": bool(flags & _FLAG_ROTATED),
        "hbpq": bool(flags & _FLAG_HBPQ),
        "num_points": n,
    }


def load_index(path):
    """Load a BPQI file; returns a MultiIndex or an HbpqIndex per its flag."""
    rd = _open(path, MAGIC_INDEX)
    d = rd.u32()
    t = rd.u32()
    m = rd.u32()
    k = rd.u32()
    flags = rd.u32()
    n = rd.u64()
    coarse = _read_coarse_pair(rd)
    if coarse.dim != d or coarse.size != t:
        raise StorageError(f"coarse block does not match the header: {path}")
    if bool(flags & _FLAG_ROTATED) != (coarse.rotation is not None):
        raise StorageError(f"rotation flag does not match the coarse block: {path}")
    offsets = rd.array("<i8", (t * t + 1,))
    ids = rd.array("<u4", (n,))
    codes = rd.array("u1", (n, m))
    if flags & _FLAG_HBPQ:
        bank = _read_bank(rd)
        rd.expect_end()
        if bank.codebook_size != k or bank.dim != d:
            raise StorageError(f"bank block does not match the header: {path}")
        return HbpqIndex(coarse, CellTable(offsets), ids, codes, bank)
    fine = PqCodec(rd.array("<f4", (m, k, d // m)))
    rd.expect_end()
    return MultiIndex(coarse, CellTable(offsets), ids, codes, fine)


def save_tables(tables: FbpqTables, path) -> None:
    t = tables.num_coarse
    m = tables.num_parts
    k = tables.codebook_size
    payload = MAGIC_TABLES + _u32(FORMAT_VERSION)
    payload += _u32(t) + _u32(m) + _u32(k)
    payload += _f32_bytes(tables.coarse_norms1)
    payload += _f32_bytes(tables.coarse_norms2)
    payload += _f32_bytes(tables.fine_norms)
    payload += _f32_bytes(tables.cross1)
    payload += _f32_bytes(tables.cross2)
    atomic_write_bytes(path, payload)


def load_tables(path) -> FbpqTables:
    rd = _open(path, MAGIC_TABLES)
    t = rd.u32()
    m = rd.u32()
    k = rd.u32()
    m2 = m // 2
    tables = FbpqTables(
        rd.array("<f4", (t,)),
        rd.array("<f4", (t,)),
        rd.array("<f4", (m, k)),
        rd.array("<f4", (t, m2, k)),
        rd.array("<f4", (t, m2, k)),
    )
    rd.expect_end()
    return tables
