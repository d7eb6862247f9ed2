"""Deterministic RNG stream derivation."""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def derive_seed(*parts) -> int:
    """Hash (master_seed, cycle, phase, ...) into a 63-bit seed.

    Streams for different tuples never alias, whatever order experiments run in.
    """
    ss = np.random.SeedSequence([_key(p) for p in parts])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
