"""Seed-stable random primitives.

Session logs must replay identically across Python and library versions, so
shuffling and noise draws cannot depend on `random` or numpy generator
internals. Everything here is plain 64-bit integer arithmetic: a SplitMix64
stream plus a Fisher-Yates shuffle driven by it. The exact algorithm is part
of the on-disk log contract (see README, "Deterministic scheduling").
"""

from __future__ import annotations

from typing import MutableSequence

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # SplitMix64 stream increment


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic 64-bit PRNG (SplitMix64), adequate for shuffling and
    Bernoulli noise; not for cryptography."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_uint64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n). Plain modulo; the bias at 64 bits is
        far below anything observable here."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_uint64() % n

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle, high index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(base: int, *parts: int) -> int:
    """Derive a child seed from a base seed and integer indices.

    Used to give every (level, pass), worker and trial its own independent
    stream while keeping the whole experiment a pure function of one seed.
    """
    s = base & _MASK64
    for p in parts:
        s = _mix((s ^ ((p & _MASK64) * _GAMMA & _MASK64)) + _GAMMA & _MASK64)
    return s
