"""
Counter-based random streams

Each stream is keyed by (seed, tag, block) so that a block of paths always sees
the same numbers no matter which worker generates it or in which order.
"""

from typing import Iterator, Tuple

import numpy as np

# Paths per random-stream block. Changing it changes every sampled number.
PATH_BLOCK = 1024

NOISE_STREAM = 0
VOLATILITY_STREAM = 1


def stream(seed: int, tag: int, block: int) -> np.random.Generator:
    """Generator over the Philox bit generator for one (tag, block) key"""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.Philox(sequence))


def path_blocks(n_paths: int, block_size: int = PATH_BLOCK) -> Iterator[Tuple[int, slice]]:
    """Yield (block index, path slice) pairs covering range(n_paths)"""
    for index, start in enumerate(range(0, n_paths, block_size)):
        yield index, slice(start, min(start + block_size, n_paths))
