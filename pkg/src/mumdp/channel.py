"""Finite-state Markov channel and the TDMA rate function."""

from __future__ import annotations

from dataclasses import dataclass
from math import floor
from typing import Sequence

import numpy as np

# floor(R * x) guard against products such as 3 * (1/3) landing just below an integer
RATE_EPS = 1e-9


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    """FSMC with row-stochastic ``transition`` and per-state ``peak_rates`` (packets/slot)."""

    states: tuple
    transition: tuple[tuple[float, ...], ...]
    peak_rates: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "transition", tuple(tuple(float(p) for p in row) for row in self.transition))
        object.__setattr__(self, "peak_rates", tuple(int(r) for r in self.peak_rates))
        n = len(self.states)
        if n == 0:
            raise ChannelError("channel needs at least one state")
        if len(self.transition) != n or any(len(row) != n for row in self.transition):
            raise ChannelError(f"transition must be a {n}x{n} matrix")
        P = np.asarray(self.transition)
        if (P < 0).any():
            raise ChannelError("transition probabilities must be nonnegative")
        if np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
            raise ChannelError("transition rows must sum to 1")
        if len(self.peak_rates) != n or any(r < 0 for r in self.peak_rates):
            raise ChannelError("peak_rates needs one nonnegative integer per state")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)


def rate(spec: ChannelSpec, h: int, x: float) -> int:
    """Packets per slot with time share ``x``: floor(R(h) * x)."""
    if not 0.0 <= x <= 1.0:
        raise ChannelError(f"resource fraction {x} outside [0, 1]")
    return int(floor(spec.peak_rates[h] * x + RATE_EPS))


def step_channel(spec: ChannelSpec, h: int, rng: np.random.Generator) -> int:
    """Sample the next channel state from row ``h``."""
    row = spec.transition[h]
    u = rng.random()
    acc = 0.0
    for k, p in enumerate(row):
        acc += p
        if u < acc:
            return k
    # rounding left u beyond the cumulative sum; take the last reachable state
    return max(k for k, p in enumerate(row) if p > 0)


def sample_path(spec: ChannelSpec, h0: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """Channel states h_0..h_{length-1} starting from ``h0``."""
    cdf = np.cumsum(spec.matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(max(length - 1, 0))
    out = np.empty(length, dtype=np.int64)
    if length == 0:
        return out
    out[0] = h0
    for t in range(1, length):
        out[t] = int(np.searchsorted(cdf[out[t - 1]], u[t - 1], side="right"))
    return out


def birth_death(labels: Sequence, peak_rates: Sequence[int], stay: float = 0.6) -> ChannelSpec:
    """Nearest-neighbour FSMC: stay w.p. ``stay``, move one state up/down otherwise, reflecting at the ends."""
    n = len(labels)
    move = (1.0 - stay) / 2.0
    P = np.zeros((n, n))
    for i in range(n):
        if n == 1:
            P[i, i] = 1.0
            continue
        P[i, i] = stay
        P[i, max(i - 1, 0)] += move
        P[i, min(i + 1, n - 1)] += move
    return ChannelSpec(tuple(labels), tuple(map(tuple, P)), tuple(peak_rates))


# eight SNR states used for the single-user experiment; rates are a config choice
DEFAULT_SNR_DB = (10, 15, 18, 20, 23, 25, 28, 30)


def default_channel(peak_rates: Sequence[int] = (1, 1, 2, 2, 3, 3, 4, 4)) -> ChannelSpec:
    return birth_death(DEFAULT_SNR_DB, peak_rates)
