"""Counter-based random substreams and categorical samplers.

Every (seed, key...) pair maps to its own Philox stream, so trials can run in any
order or on any thread and still draw the same numbers.
"""

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

SEED_MASK = 2**64 - 1

# Leading spawn-key component naming what a stream is used for.
CODEBOOK_STREAM = 0
CHANNEL_STREAM = 1
COMPETITOR_STREAM = 2
SAMPLING_STREAM = 3


def substream(seed: int, *key: int) -> Generator:
    return Generator(Philox(SeedSequence(seed & SEED_MASK, spawn_key=tuple(int(k) for k in key))))


def sample_categorical(rng: Generator, probs: np.ndarray, size: int) -> np.ndarray:
    """size i.i.d. draws from probs via inverse CDF."""
    cdf = np.cumsum(probs)
    draws = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(draws, probs.size - 1)


def sample_through(rng: Generator, inputs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """One output per input symbol, output b drawn from rows[input] (memoryless channel use)."""

    cdf = np.cumsum(rows, axis=1)[inputs]
    u = rng.random(inputs.shape)
    draws = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(draws, rows.shape[1] - 1)


def sample_product(rng: Generator, pmf_sequence: np.ndarray, samples: int) -> np.ndarray:
    """samples sequences with independent positions, position k drawn from pmf_sequence[k]."""

    length = pmf_sequence.shape[0]
    positions = np.broadcast_to(np.arange(length), (samples, length))
    return sample_through(rng, positions, pmf_sequence)
