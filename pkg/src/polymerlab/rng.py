"""Deterministic seed streams for reproducible parallel Monte Carlo.

Every sampler in the package takes a ``SeedStream``.  A stream is a master
seed plus a route of labels (strings / integers); the pair is hashed into a
Philox key, so any worker can regenerate any replica's randomness from
``(master, route)`` alone, independent of scheduling order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

RouteElem = int | str


def _digest(master: int, route: tuple[RouteElem, ...]) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(master)).encode())
    for part in route:
        h.update(b"\x1f")
        # Tag the type so child(1) and child("1") differ.
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"stream route elements must be int or str, got {part!r}")
        tag = b"i" if isinstance(part, int) else b"s"
        h.update(tag + str(part).encode())
    return h.digest()


@dataclass(frozen=True)
class SeedStream:
    """Hierarchical, hashable provenance for one RNG stream."""

    master: int
    route: tuple[RouteElem, ...] = field(default_factory=tuple)

    def child(self, *suffix: RouteElem) -> "SeedStream":
        return SeedStream(self.master, self.route + tuple(suffix))

    def key128(self) -> tuple[int, int]:
        """Two uint64 words derived from (master, route)."""
        d = _digest(self.master, self.route)
        return (
            int.from_bytes(d[:8], "little"),
            int.from_bytes(d[8:], "little"),
        )

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator; same stream -> same output, always."""
        lo, hi = self.key128()
        key = np.array([lo, hi], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def describe(self) -> str:
        return f"{self.master}/" + "/".join(str(p) for p in self.route)
