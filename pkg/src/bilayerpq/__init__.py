"""Bilayer product-quantization nearest-neighbor search.

A two-level vector index: two coarse codebooks over the vector halves span a
grid of cells, and per-point displacements from the cell centroid are
product-quantized into short codes.  Queries visit cells in ascending
lower-bound order and rerank candidates with one of three engines:

- baseline: explicit displacement reconstruction, O(D) per candidate;
- fbpq: table-assembled distances, O(M) per candidate, same ranking;
- hbpq: per-cell local codebooks for lower encoding error, O(D).
"""

from .vecio import (
    FORMAT_F32,
    FORMAT_I32,
    FORMAT_U8,
    DenseVectorSet,
    GroundTruth,
    VecFormatError,
    as_matrix,
    brute_force_knn,
    generate_anisotropic_clustered,
    generate_clustered,
    infer_format,
    read_ground_truth,
    read_vectors,
    write_vectors,
)
from .quantizer import (
    AdcTable,
    Codebook,
    PqCodec,
    Rotation,
    adc_build,
    adc_distance,
    adc_distance_batch,
    kmeans_train,
    nearest_centroids,
    opq_train,
    pq_decode,
    pq_decode_batch,
    pq_encode,
    pq_encode_batch,
    pq_reconstruction_error,
    pq_train,
    vq_assign,
)
from .multi_index import (
    CellTable,
    CoarsePair,
    MultiIndex,
    assign_cell,
    assign_cells_batch,
    build_index,
    cell_sequence,
    displacements,
    encode_reconstruct,
    multi_sequence,
    scan_baseline,
    search_baseline,
    select_top,
    train_coarse,
    train_fine_global,
    traverse,
)
from .fbpq import (
    FbpqQueryState,
    FbpqTables,
    build_tables,
    build_tables_from,
    fbpq_distance,
    prepare_query,
    scan_fbpq,
    search_fbpq,
    table_element_counts,
)
from .hbpq import (
    HbpqIndex,
    LocalCodebookBank,
    bank_element_count,
    build_hbpq_index,
    encode_reconstruct_local,
    hbpq_decode,
    hbpq_encode,
    scan_hbpq,
    search_hbpq,
    train_local_codebooks,
)
from .storage import (
    StorageError,
    load_bank,
    load_codebook,
    load_codec,
    load_coarse_pair,
    load_index,
    load_rotation,
    load_tables,
    read_index_header,
    save_bank,
    save_codebook,
    save_codec,
    save_coarse_pair,
    save_index,
    save_rotation,
    save_tables,
)
from .evalbench import (
    BaselineEngine,
    ComparisonReport,
    EncodingScheme,
    FbpqEngine,
    HbpqEngine,
    RecallReport,
    compare_engines,
    encoding_error,
    global_scheme,
    local_scheme,
    make_engine,
    measure_rerank_throughput,
    recall_at,
    run_engine,
    time_search,
)

__version__ = "0.1.0"

__all__ = [
    "FORMAT_F32",
    "FORMAT_I32",
    "FORMAT_U8",
    "DenseVectorSet",
    "GroundTruth",
    "VecFormatError",
    "as_matrix",
    "brute_force_knn",
    "generate_anisotropic_clustered",
    "generate_clustered",
    "infer_format",
    "read_ground_truth",
    "read_vectors",
    "write_vectors",
    "AdcTable",
    "Codebook",
    "PqCodec",
    "Rotation",
    "adc_build",
    "adc_distance",
    "adc_distance_batch",
    "kmeans_train",
    "nearest_centroids",
    "opq_train",
    "pq_decode",
    "pq_decode_batch",
    "pq_encode",
    "pq_encode_batch",
    "pq_reconstruction_error",
    "pq_train",
    "vq_assign",
    "CellTable",
    "CoarsePair",
    "MultiIndex",
    "assign_cell",
    "assign_cells_batch",
    "build_index",
    "cell_sequence",
    "displacements",
    "encode_reconstruct",
    "multi_sequence",
    "scan_baseline",
    "search_baseline",
    "select_top",
    "train_coarse",
    "train_fine_global",
    "traverse",
    "FbpqQueryState",
    "FbpqTables",
    "build_tables",
    "build_tables_from",
    "fbpq_distance",
    "prepare_query",
    "scan_fbpq",
    "search_fbpq",
    "table_element_counts",
    "HbpqIndex",
    "LocalCodebookBank",
    "bank_element_count",
    "build_hbpq_index",
    "encode_reconstruct_local",
    "hbpq_decode",
    "hbpq_encode",
    "scan_hbpq",
    "search_hbpq",
    "train_local_codebooks",
    "StorageError",
    "load_bank",
    "load_codebook",
    "load_codec",
    "load_coarse_pair",
    "load_index",
    "load_rotation",
    "load_tables",
    "read_index_header",
    "save_bank",
    "save_codebook",
    "save_codec",
    "save_coarse_pair",
    "save_index",
    "save_rotation",
    "save_tables",
    "BaselineEngine",
    "ComparisonReport",
    "EncodingScheme",
    "FbpqEngine",
    "HbpqEngine",
    "RecallReport",
    "compare_engines",
    "encoding_error",
    "global_scheme",
    "local_scheme",
    "make_engine",
    "measure_rerank_throughput",
    "recall_at",
    "run_engine",
    "time_search",
    "__version__",
]
