from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(master_seed, stream_id)``.

    Philox is keyed directly with the pair, so distinct stream ids never share
    state and the same pair always reproduces the same draws.
    """

    master_seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        # mixes the parent id so child streams of different parents do not collide
        mixed = (self.stream_id * 0x9E3779B97F4A7C15 + index + 1) & _MASK64
        return RngStream(self.master_seed, mixed)


def as_generator(stream: RngStream | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RngStream):
        return stream.generator()
    if stream is None:
        return RngStream(0, 0).generator()
    return RngStream(int(stream), 0).generator()
