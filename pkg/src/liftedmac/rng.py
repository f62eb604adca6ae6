"""Reproducible random substreams.

Every (seed, stream_id) pair maps to an independent PCG64 generator through
numpy's SeedSequence spawn keys, so trials and edge groups can be drawn in any
order (or in parallel) without changing results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, sub_id: int) -> "RngStream":
        # Fold the parent id into the seed so substreams of different parents differ.
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, sub_id))
        return RngStream(int(ss.generate_state(2, np.uint64)[0]), sub_id)


def as_generator(rng: RngStream | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)
