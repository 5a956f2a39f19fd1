"""Seed derivation for reproducible, splittable random streams.

All randomness is drawn from ``numpy.random.Generator`` over the PCG64 bit
generator. Child streams are derived with ``numpy.random.SeedSequence`` by
appending integer keys to the spawn key, which hashes (parent seed, keys)
into an independent 128-bit state. The same (seed, keys) always yields the
same stream, on every machine.
"""
from typing import Tuple

import numpy as np

# spawn-key tags for the streams of one experiment unit
STREAM_LABELED = 0
STREAM_UNLABELED = 1
STREAM_BOOTSTRAP = 2
STREAM_OPTIMIZER = 3
STREAM_DATASET = 4

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    spawn_key: Tuple[int, ...] = tuple(int(k) for k in keys)
    return np.random.SeedSequence(check_seed(seed), spawn_key=spawn_key)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Create the generator for the stream identified by (seed, keys).

    Args:
        seed (int): The parent 64-bit seed.
        *keys (int): Path of child indices, e.g. (rep, bootstrap_index).

    Returns:
        np.random.Generator: A PCG64-backed generator.
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def child_seed(seed: int, *keys: int) -> int:
    """Derive a 64-bit child seed from (seed, keys)."""
    state = seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)
    return int(state[0])
