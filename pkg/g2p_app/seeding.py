"""Seeded random streams.

Every random draw in the pipeline comes from a NumPy ``Philox`` (counter-based)
generator keyed by ``SeedSequence([seed, *labels])``. String labels are folded to
integers with CRC-32 so a stream is fully named by the run seed plus its labels,
e.g. ``rng_stream(seed, 'corrupt', example_index)``.
"""
import zlib

import numpy as np


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f'stream labels must be non-negative, got {label}')
        return int(label)
    return zlib.crc32(str(label).encode('utf-8'))


def seed_sequence(seed, *labels):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_key(l) for l in labels])


def rng_stream(seed, *labels):
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *labels)))

