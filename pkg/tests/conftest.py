"""Shared fixtures: a small trained rig reused across suites.

Everything is seeded; the rig is session-scoped because coarse and local
codebook training dominates test time.
"""

import numpy as np
import pytest

import bilayerpq as bq


class Rig:
    """A small fully trained setup: data, codebooks, indexes, tables."""

    def __init__(self, seed: int = 101):
        self.dim = 16
        self.t = 16
        self.m = 4
        self.k = 16
        base = bq.generate_clustered(48, 80, self.dim, 0.05, seed=seed)
        self.base = base
        rng = np.random.default_rng(seed + 1)
        pick = rng.choice(base.count, 32, replace=False)
        noise = rng.normal(0.0, 0.02, (32, self.dim)).astype(np.float32)
        self.queries = bq.DenseVectorSet(base.data[pick] + noise)
        self.gt = bq.brute_force_knn(base, self.queries, 10)
        self.coarse = bq.train_coarse(base, self.t, seed=seed + 2)
        self.fine = bq.train_fine_global(base, self.coarse, self.m, self.k, seed=seed + 3)
        self.index = bq.build_index(base, self.coarse, self.fine)
        self.tables = bq.build_tables(self.index)
        self.bank = bq.train_local_codebooks(
            base, self.coarse, self.m, self.k, min_points=64, seed=seed + 4
        )
        self.hindex = bq.build_hbpq_index(base, self.coarse, self.bank)


@pytest.fixture(scope="session")
def rig():
    return Rig()


@pytest.fixture(scope="session")
def rotated_rig():
    class RotatedRig:
        def __init__(self):
            self.dim = 16
            self.t = 8
            self.m = 4
            self.k = 16
            base = bq.generate_clustered(24, 60, self.dim, 0.05, seed=301)
            self.base = base
            self.queries = bq.DenseVectorSet(base.data[:16].copy())
            self.coarse = bq.train_coarse(base, self.t, optimized=True, seed=302)
            self.fine = bq.train_fine_global(base, self.coarse, self.m, self.k, seed=303)
            self.index = bq.build_index(base, self.coarse, self.fine)
            self.tables = bq.build_tables(self.index)
            self.bank = bq.train_local_codebooks(
                base, self.coarse, self.m, self.k, min_points=64, seed=304, optimized=True
            )
            self.hindex = bq.build_hbpq_index(base, self.coarse, self.bank)

    return RotatedRig()
