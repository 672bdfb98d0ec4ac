import numpy as np


def generator(*key: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by a tuple of non-negative ints.

    The same key always yields the same stream, independent of call order,
    so dropout masks and shuffles can be reproduced from (seed, epoch, step).
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def as_generator(rng) -> np.random.Generator | None:
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    return generator(int(rng))
