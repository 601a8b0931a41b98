"""Counter-based randomness keyed by position, not by draw order.

Every random decision in a sampled tree is a pure function of
(experiment seed, sample index, position in the tree, draw tag).  Positions
are identified by a running 64-bit key: the root key is derived from the seed
and the sample index, a child's key from its parent's key and the child slot.
Re-expanding a frontier, changing the traversal order, or splitting work
across processes therefore cannot change a tree that has already been decided.

The mixer is a splitmix64-style finaliser applied to a linear combination of
the inputs.  It is not cryptographic; it only has to avalanche well enough
for Monte Carlo, which this construction is known to do.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_K0 = 0x9E3779B97F4A7C15
_K1 = 0xBF58476D1CE4E5B9
_K2 = 0x94D049BB133111EB

# Draw tags: fixed offsets separating the independent uniform streams a single
# vertex (or walk) may consume.
TAG_CHILD_COUNT = 1
TAG_SURVIVOR_COUNT = 2
TAG_TYPE_RANK = 3
TAG_WALK = 1 << 40


def _finalize_int(x: int) -> int:
    x &= _MASK
    x = (x ^ (x >> 30)) * _K1 & _MASK
    x = (x ^ (x >> 27)) * _K2 & _MASK
    return x ^ (x >> 31)


def mix2(a: int, b: int) -> int:
    """Combine two 64-bit values into a new key (scalar)."""
    return _finalize_int(a * _K1 + b * _K2 + _K0)


def derive_key(*parts: int) -> int:
    """Fold an arbitrary tuple of integers into a single key."""
    key = _K0
    for p in parts:
        key = mix2(key, p & _MASK)
    return key


def unit(key: int, counter: int) -> float:
    """Uniform in [0, 1) identified by (key, counter)."""
    return (mix2(key, counter) >> 11) * 2.0**-53


def mix2_array(a: np.ndarray, b) -> np.ndarray:
    """Vectorised mix2; `a` uint64 array, `b` uint64 array or scalar."""
    a = np.asarray(a, dtype=np.uint64)
    x = a * np.uint64(_K1) + np.asarray(b, dtype=np.uint64) * np.uint64(_K2) + np.uint64(_K0)
    x ^= x >> np.uint64(30)
    x *= np.uint64(_K1)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_K2)
    x ^= x >> np.uint64(31)
    return x


def unit_array(keys: np.ndarray, counter) -> np.ndarray:
    """Vectorised uniforms in [0, 1) for (key, counter) pairs."""
    return (mix2_array(keys, counter) >> np.uint64(11)) * 2.0**-53


def root_key(seed: int, sample_index: int) -> int:
    return derive_key(seed & _MASK, sample_index & _MASK)


def root_keys_array(seed: int, sample_indices: np.ndarray) -> np.ndarray:
    """root_key for a whole batch of sample indices, vectorised."""
    base = mix2(_K0, seed & _MASK)
    bases = np.full(sample_indices.shape[0], base, dtype=np.uint64)
    return mix2_array(bases, np.asarray(sample_indices, dtype=np.uint64))


def child_keys(parent_keys: np.ndarray, slots: np.ndarray) -> np.ndarray:
    """Keys for children sitting in 1-based `slots` under `parent_keys`."""
    return mix2_array(parent_keys, np.asarray(slots, dtype=np.uint64))
