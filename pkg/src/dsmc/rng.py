"""Keyed random streams.

Every stream is a pure function of ``(seed, level, node, role, counter)``, so a
tree node draws the same numbers whatever thread runs it and in whatever order.
Level 0 holds the leaves; combines at tree level ``l`` use level ``l + 1``.
"""

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from . import kernels

_MASK64 = (1 << 64) - 1


class Role(IntEnum):
    LEAF_PROPOSAL = 0
    PAIR_RESAMPLE = 1
    STAR_SELECT = 2
    GIBBS_PARAM = 3
    FILTER = 4
    BACKWARD = 5
    DATA = 6


@dataclass(frozen=True)
class StreamKey:
    seed: int
    level: int = 0
    node: int = 0
    role: Role = Role.LEAF_PROPOSAL
    counter: int = 0

    def child(self, **changes):
        return replace(self, **changes)

    def seed_sequence(self):
        spawn_key = (int(self.level), int(self.node), int(self.role), int(self.counter))
        return np.random.SeedSequence(int(self.seed) & _MASK64, spawn_key=spawn_key)


def derive_stream(key):
    """Generator (Philox) for ``key``; same key, same sequence."""
    return np.random.Generator(np.random.Philox(key.seed_sequence()))


def replicate_seed(seed, replicate):
    """Independent 63-bit seed for replicate ``replicate`` of a run seeded by ``seed``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(0x5EED, int(replicate)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


class SlotStream:
    """Counter-based uniforms indexed by (slot, counter).

    Each output slot of a lazy resampler reads its own sequence, so the number
    of draws one slot consumes never shifts another slot's randomness.
    """

    def __init__(self, k0, k1):
        self.k0 = int(k0) & _MASK64
        self.k1 = int(k1) & _MASK64

    @classmethod
    def from_key(cls, key):
        k0, k1 = key.seed_sequence().generate_state(2, np.uint64)
        return cls(k0, k1)

    @classmethod
    def from_generator(cls, rng):
        k0, k1 = rng.integers(0, 2**64, size=2, dtype=np.uint64)
        return cls(k0, k1)

    def uniforms(self, slots, counters):
        return kernels.counter_uniforms(self.k0, self.k1, slots, counters)
