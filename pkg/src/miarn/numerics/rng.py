"""Named, splittable random streams so every consumer is independently seeded."""

import hashlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    """A generator for (seed, label), stable across runs and platforms.

    Distinct labels ("init", "shuffle:3", ...) under the same seed yield
    independent streams; the label is folded in through sha256 rather than
    ``hash()`` so results do not depend on interpreter hash randomization.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
