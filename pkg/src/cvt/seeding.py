"""Seed-derivation helper.

Every source of randomness (task split, stream order, augmentation, model
init, buffer) derives its generator from the experiment seed plus a distinct
key, so methods sharing a seed see identical splits and streams no matter
how much randomness each consumes elsewhere.
"""

import numpy as np

SPLIT, STREAM, AUGMENT, MODEL, BUFFER, DATASET = range(6)


def rng_from(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
