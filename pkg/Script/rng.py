"""Counter-based random streams keyed by (master seed, replica index, purpose tag).

A stream is an immutable key; ``generator()`` materializes a Philox generator from a
``SeedSequence`` whose spawn key is the stream key. Children are derived by extending
the key, so any replica can be recomputed without replaying the others and results do
not depend on how work is scheduled across threads.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

_MASK64 = (1 << 64) - 1


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (bool, np.bool_)):
        raise InvalidParameterError("stream key parts must be integers or strings")
    part = int(part)
    if part < 0:
        raise InvalidParameterError(f"stream key parts must be non-negative, got {part}")
    return part


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    def child(self, *parts: int | str) -> "RngStream":
        """Derive an independent stream by appending index/tag parts to the key."""
        return RngStream(self.seed, self.key + tuple(_key_part(p) for p in parts))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(seq))


def stream(seed: int, *parts: int | str) -> RngStream:
    """Shorthand for ``RngStream(seed).child(*parts)``."""
    return RngStream(seed).child(*parts)
