import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from a global seed and a stream name.

    Streams with different names never share state, so adding a consumer of
    one stream cannot perturb another.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
