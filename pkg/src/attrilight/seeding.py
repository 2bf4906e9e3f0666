"""Named random substreams derived from one global seed.

Every stochastic component (dataset sampling, region-feature noise,
random-word masking, proposal jitter) draws from its own substream so that
ablation modes share identical data and reruns are byte-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return a generator for the (seed, name, indices...) substream.

    The stream depends only on its arguments, never on how many other
    streams were created before it.
    """
    entropy = [int(seed), _name_key(name), *[int(i) for i in indices]]
    return np.random.default_rng(np.random.SeedSequence(entropy))
