"""Counter-based pseudo-random draws.

Every draw is a pure function of ``(seed, *counters)``: the key is folded
through the SplitMix64 finalizer, so draws can be generated in any order or in
parallel and always agree bit for bit.
"""

import numpy as np

from bgbench import kernels

UINT64_MAX = 2**64 - 1


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= UINT64_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def hash_u64(seed, *counters):
    """64-bit output for a single key. Counters broadcast against each other."""
    seed = _check_seed(seed)
    cols = np.broadcast_arrays(*[np.asarray(c, dtype=np.uint64) for c in counters])
    shape = cols[0].shape if cols else ()
    keys = np.stack([c.reshape(-1) for c in cols], axis=1) if cols else np.zeros((1, 0), np.uint64)
    out = kernels.hash_keys(seed, keys)
    return out.reshape(shape) if cols else out[0]


def randbelow(bound, seed, *counters):
    """Integer in ``[0, bound)`` per key, via ``hash mod bound``."""
    if bound < 1:
        raise ValueError("bound must be >= 1")
    return (np.asarray(hash_u64(seed, *counters)) % np.uint64(bound)).astype(np.int64)


def derive_seed(seed, *counters):
    """Child seed for an independent stream (e.g. per split or per epoch)."""
    return int(hash_u64(seed, *counters))
