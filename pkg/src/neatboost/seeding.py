"""Deterministic seed derivation.

Every stochastic component in the package draws from a generator produced
here. A single root seed plus a tuple of string/int tags maps, via sha256,
to a 63-bit child seed, so independent pipeline stages get independent
streams without any global RNG state.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(root: int, *tags) -> int:
    """Derive a child seed from a root seed and a tag path.

    Tags may be ints or strings. The same (root, tags) pair always maps to
    the same value, across processes and platforms.
    """
    for t in tags:
        if not isinstance(t, (int, str)):
            raise TypeError(f"seed tags must be int or str, got {type(t).__name__}")
    text = repr((int(root),) + tuple(tags))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def derive_rng(root: int, *tags) -> np.random.Generator:
    """Generator seeded by :func:`derive_seed` on the same arguments."""
    return np.random.default_rng(derive_seed(root, *tags))
