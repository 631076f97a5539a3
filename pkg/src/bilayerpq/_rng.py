"""Seed plumbing shared across modules."""

import numpy as np

_MASK = (1 << 63) - 1


def seed_sequence(seed: int, *tags: int) -> np.random.SeedSequence:
    """Build a SeedSequence from a user seed plus derivation tags."""
    return np.random.SeedSequence((int(seed) & _MASK, *tags))


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *tags))
