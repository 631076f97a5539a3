"""Vector IO, dataset generation and the exact-knn oracle."""

import struct

import numpy as np
import pytest

import bilayerpq as bq
from bilayerpq.vecio import VecFormatError


def _write_raw(path, payload: bytes):
    path.write_bytes(payload)
    return path


class TestDenseVectorSet:
    def test_wraps_float32_contiguous(self):
        vs = bq.DenseVectorSet(np.arange(12, dtype=np.float64).reshape(3, 4))
        assert vs.data.dtype == np.float32
        assert vs.data.flags["C_CONTIGUOUS"]
        assert (vs.count, vs.dim, len(vs)) == (3, 4, 3)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            bq.DenseVectorSet(np.zeros(5, np.float32))

    def test_rejects_non_finite(self):
        bad = np.zeros((2, 3), np.float32)
        bad[1, 1] = np.nan
        with pytest.raises(ValueError):
            bq.DenseVectorSet(bad)

    def test_as_matrix_passthrough(self):
        vs = bq.DenseVectorSet(np.ones((2, 2), np.float32))
        assert bq.as_matrix(vs) is vs.data
        m = bq.as_matrix([[1.0, 2.0], [3.0, 4.0]])
        assert m.shape == (2, 2) and m.dtype == np.float32


class TestGroundTruth:
    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            bq.GroundTruth(np.zeros((2, 3), np.int64), np.zeros((2, 2)))

    def test_rejects_decreasing_rows(self):
        ids = np.zeros((1, 3), np.int64)
        with pytest.raises(ValueError):
            bq.GroundTruth(ids, np.array([[2.0, 1.0, 3.0]]))

    def test_properties(self):
        gt = bq.GroundTruth(np.zeros((4, 2), np.int64), np.zeros((4, 2)))
        assert gt.k == 2 and gt.num_queries == 4


class TestFormats:
    def test_infer_format(self):
        assert bq.infer_format("x.fvecs") == bq.FORMAT_F32
        assert bq.infer_format("x.BVECS") == bq.FORMAT_U8
        assert bq.infer_format("x.ivecs") == bq.FORMAT_I32
        with pytest.raises(VecFormatError):
            bq.infer_format("x.txt")

    @pytest.mark.parametrize(
        "suffix,fmt",
        [(".fvecs", bq.FORMAT_F32), (".bvecs", bq.FORMAT_U8), (".ivecs", bq.FORMAT_I32)],
    )
    def test_round_trip(self, tmp_path, suffix, fmt):
        rng = np.random.default_rng(7)
        if fmt == bq.FORMAT_U8:
            data = rng.integers(0, 256, (9, 5)).astype(np.float32)
        elif fmt == bq.FORMAT_I32:
            data = rng.integers(-1000, 1000, (9, 5)).astype(np.float32)
        else:
            data = rng.normal(0, 1, (9, 5)).astype(np.float32)
        path = tmp_path / f"v{suffix}"
        bq.write_vectors(bq.DenseVectorSet(data), path)
        back = bq.read_vectors(path)
        np.testing.assert_array_equal(back.data, data)

    def test_read_limit(self, tmp_path):
        data = np.arange(20, dtype=np.float32).reshape(10, 2)
        path = tmp_path / "v.fvecs"
        bq.write_vectors(bq.DenseVectorSet(data), path)
        back = bq.read_vectors(path, limit=3)
        np.testing.assert_array_equal(back.data, data[:3])
        with pytest.raises(VecFormatError, match="limit"):
            bq.read_vectors(path, limit=0)

    def test_write_u8_range_check(self, tmp_path):
        vs = bq.DenseVectorSet(np.array([[300.0, 1.0]], np.float32))
        with pytest.raises(VecFormatError, match="u8"):
            bq.write_vectors(vs, tmp_path / "v.bvecs")

    def test_write_empty_rejected(self, tmp_path):
        vs = bq.DenseVectorSet(np.zeros((0, 3), np.float32))
        with pytest.raises(VecFormatError, match="empty"):
            bq.write_vectors(vs, tmp_path / "v.fvecs")


class TestReadErrors:
    def test_empty_file(self, tmp_path):
        path = _write_raw(tmp_path / "v.fvecs", b"")
        with pytest.raises(VecFormatError, match="empty input"):
            bq.read_vectors(path)

    def test_short_header(self, tmp_path):
        path = _write_raw(tmp_path / "v.fvecs", b"\x01\x00\x00")
        with pytest.raises(VecFormatError, match="truncated input at byte 0"):
            bq.read_vectors(path)

    def test_bad_component_count(self, tmp_path):
        path = _write_raw(tmp_path / "v.fvecs", struct.pack("<i", 0) + b"\x00" * 8)
        with pytest.raises(VecFormatError, match="bad component count"):
            bq.read_vectors(path)

    def test_truncated_tail(self, tmp_path):
        rec = struct.pack("<iff", 2, 1.0, 2.0)
        path = _write_raw(tmp_path / "v.fvecs", rec + rec[:5])
        with pytest.raises(VecFormatError, match="truncated input at byte 12"):
            bq.read_vectors(path)

    def test_inconsistent_dims(self, tmp_path):
        recs = struct.pack("<iff", 2, 1.0, 2.0) + struct.pack("<iff", 3, 1.0, 2.0)
        path = _write_raw(tmp_path / "v.fvecs", recs)
        with pytest.raises(VecFormatError, match="record 1"):
            bq.read_vectors(path)

    def test_non_finite_rejected(self, tmp_path):
        path = _write_raw(
            tmp_path / "v.fvecs", struct.pack("<iff", 2, 1.0, float("nan"))
        )
        with pytest.raises(VecFormatError):
            bq.read_vectors(path)


class TestGroundTruthFile:
    def test_ids_read_back_exact(self, tmp_path):
        ids = np.array([[5, 2, 9], [0, 7, 1]], np.int64)
        path = tmp_path / "gt.ivecs"
        bq.write_vectors(bq.DenseVectorSet(ids.astype(np.float32)), path)
        gt = bq.read_ground_truth(path)
        np.testing.assert_array_equal(gt.ids, ids)
        assert gt.ids.dtype == np.int64

    def test_negative_id_rejected(self, tmp_path):
        path = tmp_path / "gt.ivecs"
        bq.write_vectors(bq.DenseVectorSet(np.array([[-1.0, 2.0]], np.float32)), path)
        with pytest.raises(VecFormatError, match="negative"):
            bq.read_ground_truth(path)


class TestGenerators:
    def test_clustered_shape_and_determinism(self):
        a = bq.generate_clustered(6, 10, 8, 0.1, seed=3)
        b = bq.generate_clustered(6, 10, 8, 0.1, seed=3)
        assert (a.count, a.dim) == (60, 8)
        np.testing.assert_array_equal(a.data, b.data)
        c = bq.generate_clustered(6, 10, 8, 0.1, seed=4)
        assert not np.array_equal(a.data, c.data)

    def test_clustered_zero_spread_duplicates_centers(self):
        vs = bq.generate_clustered(4, 5, 6, 0.0, seed=1)
        rows = vs.data.reshape(4, 5, 6)
        for c in range(4):
            np.testing.assert_array_equal(rows[c], np.broadcast_to(rows[c, 0], (5, 6)))

    def test_clustered_validation(self):
        with pytest.raises(ValueError):
            bq.generate_clustered(0, 5, 6, 0.1)
        with pytest.raises(ValueError):
            bq.generate_clustered(2, 5, 6, -0.1)

    def test_anisotropic_shape_and_determinism(self):
        a = bq.generate_anisotropic_clustered(5, 8, 6, 0.1, seed=9)
        b = bq.generate_anisotropic_clustered(5, 8, 6, 0.1, seed=9)
        assert (a.count, a.dim) == (40, 6)
        np.testing.assert_array_equal(a.data, b.data)

    def test_anisotropic_clusters_have_unequal_axis_variance(self):
        vs = bq.generate_anisotropic_clustered(1, 4000, 8, 0.1, seed=2, anisotropy=8.0)
        sd = vs.data.std(axis=0)
        assert sd.max() / sd.min() > 2.0


class TestBruteForceKnn:
    def test_hand_checked_values(self):
        base = np.array([[0, 0], [1, 0], [0, 2], [1, 1], [3, 0]], np.float32)
        queries = np.array([[1.0, 0.5], [0.0, 0.0]], np.float32)
        gt = bq.brute_force_knn(base, queries, 3)
        # q0 distances: 1.25, 0.25, 3.25, 0.25, 4.25 -> tie between 1 and 3
        np.testing.assert_array_equal(gt.ids, [[1, 3, 0], [0, 1, 3]])
        np.testing.assert_allclose(gt.distances, [[0.25, 0.25, 1.25], [0.0, 1.0, 2.0]])

    def test_ties_break_toward_lower_id(self):
        base = np.zeros((6, 3), np.float32)
        gt = bq.brute_force_knn(base, np.zeros((1, 3), np.float32), 4)
        np.testing.assert_array_equal(gt.ids, [[0, 1, 2, 3]])

    def test_matches_direct_argsort_oracle(self):
        rng = np.random.default_rng(12)
        base = rng.normal(0, 1, (400, 10)).astype(np.float32)
        queries = rng.normal(0, 1, (25, 10)).astype(np.float32)
        gt = bq.brute_force_knn(base, queries, 7)
        d2 = np.sum(
            (queries[:, None, :].astype(np.float64) - base[None].astype(np.float64))
            ** 2,
            axis=2,
        )
        for qi in range(25):
            order = np.lexsort((np.arange(400), d2[qi]))[:7]
            np.testing.assert_array_equal(gt.ids[qi], order)
            np.testing.assert_allclose(gt.distances[qi], d2[qi][order], rtol=1e-10)

    def test_rows_non_decreasing(self):
        rng = np.random.default_rng(3)
        base = rng.normal(0, 1, (100, 4)).astype(np.float32)
        gt = bq.brute_force_knn(base, base[:10], 20)
        assert np.all(np.diff(gt.distances, axis=1) >= 0)
        np.testing.assert_array_equal(gt.ids[:, 0], np.arange(10))

    def test_validation(self):
        base = np.zeros((5, 3), np.float32)
        with pytest.raises(ValueError, match="k must be"):
            bq.brute_force_knn(base, base[:1], 6)
        with pytest.raises(ValueError, match="dimension mismatch"):
            bq.brute_force_knn(base, np.zeros((1, 4), np.float32), 1)
