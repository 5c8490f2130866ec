"""Counter-based random substreams.

Every path gets its own Philox stream addressed by ``(master_seed, purpose,
path_index)``. The key depends on the seed and purpose, the path index sits
in the high word of the 256-bit counter, so streams never overlap and the
draws of a path do not depend on which thread produced it or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream_key(master_seed: int, purpose: str = "paths") -> np.ndarray:
    """128-bit Philox key for ``(master_seed, purpose)``."""
    if master_seed is None:
        raise ValueError("a master seed is required (no implicit entropy)")
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, _purpose_code(purpose)])
    return ss.generate_state(2, dtype=np.uint64)


def substream(master_seed: int, index: int, purpose: str = "paths") -> np.random.Generator:
    """Generator for path ``index`` under ``master_seed``."""
    if index < 0:
        raise ValueError("substream index must be non-negative")
    counter = np.array([0, 0, 0, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, purpose), counter=counter))


def random_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` fair bits as uint8 in {0, 1}."""
    raw = np.frombuffer(rng.bytes((n + 7) // 8), dtype=np.uint8)
    return np.unpackbits(raw)[:n]
