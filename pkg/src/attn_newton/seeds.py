"""Named random streams derived from one top-level seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("instance", "state", "sketch", "solver", "verify", "bench")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(seed: int, name: str) -> int:
    """A 63-bit integer seed for sub-stream ``name``; stable across runs and platforms."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), stream_key(name)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), stream_key(name)]))
