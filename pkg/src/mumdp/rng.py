"""Seed splitting: one independent stream per (master seed, user, purpose).

Streams are keyed by the user's name rather than its position, so
reordering users leaves every user's sample path unchanged.
"""

from __future__ import annotations

import zlib

import numpy as np

PURPOSES = {"initial": 0, "channel": 1, "sizes": 2, "explore": 3, "assoc": 4}


def user_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, user: str, purpose: str) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence([int(seed), user_key(user), PURPOSES[purpose]])
    return np.random.Generator(np.random.PCG64(ss))


class UserStreams:
    """The five per-user generators of one episode."""

    def __init__(self, seed: int, user: str):
        self.initial = stream(seed, user, "initial")
        self.channel = stream(seed, user, "channel")
        self.sizes = stream(seed, user, "sizes")
        self.explore = stream(seed, user, "explore")
        self.assoc = stream(seed, user, "assoc")
