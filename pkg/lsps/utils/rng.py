"""Counter-based, splittable random streams.

A stream is identified by a master seed plus a sequence of labels (strings or
integers).  The same key always yields the same Philox generator, so results do
not depend on which worker draws them or in which order.
"""

import zlib
from typing import Union

import numpy as np

Label = Union[int, str]


def _label_key(label: Label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    if label < 0:
        raise ValueError(f"Stream labels must be non-negative, got {label}")
    return int(label)


def stream(master_seed: int, *labels: Label) -> np.random.Generator:
    """Return the generator for (master_seed, *labels)."""
    if master_seed < 0:
        raise ValueError(f"Seed must be an unsigned integer, got {master_seed}")
    seq = np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=tuple(_label_key(label) for label in labels),
    )
    return np.random.Generator(np.random.Philox(seq))
