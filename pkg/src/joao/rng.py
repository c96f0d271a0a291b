"""Named, reproducible random substreams derived from one master seed.

Every consumer of randomness asks for a generator keyed by a tuple such as
``("aug", epoch, batch, side, position)``. The key is hashed into the spawn
key of a :class:`numpy.random.SeedSequence`, so the stream a consumer receives
does not depend on how many other streams were drawn before it.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV_VAR = "JOAO_SEED"


def _key_word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"substream key parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported substream key part {part!r}")


def substream(seed: int, *key) -> np.random.Generator:
    """Return the generator for ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def substream_seed(seed: int, *key) -> int:
    """A 63-bit integer seed for third-party code that wants a plain int."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def resolve_seed(seed: int | None, default: int = 0) -> int:
    """Explicit seed, else ``$JOAO_SEED``, else ``default``."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip():
        return int(env)
    return default
