"""Named random streams.

Every generator in the package draws from `stream(seed, tag)`, a Philox
counter-based generator keyed by the seed and a hash of the purpose tag, so
streams with different tags never overlap and adding a new consumer never
shifts the numbers another consumer sees.
"""
import hashlib
import numpy as np


def _tag_key(tag):
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed, tag):
    """Returns the generator for `(seed, tag)`.

    Arguments:
        seed (int): Experiment seed (any non-negative integer < 2**64).
        tag (str): Purpose tag, ex: "rf.V" or "chain.stage3".

    Returns:
        numpy.random.Generator: A Philox-backed generator.
    """
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | (_tag_key(tag) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def trial_seed(seed, index):
    """Derives the seed of trial `index` from the experiment seed.
    """
    digest = hashlib.sha256("{}:trial:{}".format(int(seed), int(index))
                            .encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
