"""Independent finite-horizon dynamic programs used as reference values.

Nothing here touches the compiled array models: states are explicit
``UserState`` objects, successors come from ``traffic.transition`` and the
channel matrix, and actions are enumerated afresh every time.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Sequence

from .channel import ChannelSpec, rate
from .model import UserState, enumerate_states
from .traffic import GopSpec, feasible_schedules, transition, utility


class _UserOracle:
    def __init__(self, gop: GopSpec, channel: ChannelSpec, x_grid: Sequence[float]):
        self.gop, self.channel, self.x_grid = gop, channel, tuple(x_grid)
        self.states = [s for p in range(gop.period) for s in enumerate_states(gop, channel, p)]

    @lru_cache(maxsize=None)
    def options(self, s: UserState, xi: int):
        """(utility, successor distribution) for every schedule fitting x_grid[xi]."""
        r = rate(self.channel, s.channel, self.x_grid[xi])
        out = []
        P = self.channel.transition[s.channel]
        for y in feasible_schedules(s.traffic, r):
            nxt = {}
            for ts, p in transition(self.gop, s.traffic, y).items():
                for h2, ph in enumerate(P):
                    if ph > 0:
                        nxt[UserState(ts, h2)] = p * ph
            out.append((utility(self.gop, s.traffic, y), nxt))
        return out


def finite_horizon_local(gop: GopSpec, channel: ChannelSpec, x_grid: Sequence[float], lam: float,
                         alpha: float, horizon: int, const: float = 0.0) -> dict[UserState, float]:
    """Optimal ``horizon``-step discounted priced reward from every state (zero terminal value)."""
    o = _UserOracle(gop, channel, x_grid)
    V = {s: 0.0 for s in o.states}
    for _ in range(horizon):
        new = {}
        for s in o.states:
            best = -float("inf")
            for xi, x in enumerate(o.x_grid):
                for u, nxt in o.options(s, xi):
                    q = u - lam * x + const + alpha * sum(p * V[s2] for s2, p in nxt.items())
                    best = max(best, q)
            new[s] = best
        V = new
    return V


def finite_horizon_joint(users: Sequence[tuple[GopSpec, ChannelSpec]], x_grid: Sequence[float],
                         alpha: float, horizon: int, lam: float = 0.0,
                         relaxed: bool = False) -> dict[tuple[UserState, ...], float]:
    """``horizon``-step optimum of the multi-user problem.

    Stage-constrained (sum x <= 1) unless ``relaxed``, in which case every
    grid tuple is allowed and the reward is sum_i (u_i - lam x_i + lam / M).
    """
    M = len(users)
    oracles = [_UserOracle(g, c, x_grid) for g, c in users]
    grid = tuple(x_grid)
    periods = [g.period for g, _ in users]
    L = 1
    for p in periods:
        L = L * p // _gcd(L, p)
    joint = []
    for tau in range(L):
        per = [[s for s in o.states if s.phase == tau % g.period] for o, (g, _) in zip(oracles, users)]
        joint.extend(itertools.product(*per))
    xtuples = [xt for xt in itertools.product(range(len(grid)), repeat=M)
               if relaxed or sum(grid[i] for i in xt) <= 1.0 + 1e-12]
    const = lam if relaxed else 0.0
    V = {J: 0.0 for J in joint}
    for _ in range(horizon):
        new = {}
        for J in joint:
            best = -float("inf")
            for xt in xtuples:
                # users' continuation values do not factor, so enumerate schedule tuples
                opts = [oracles[i].options(J[i], xt[i]) for i in range(M)]
                xsum = sum(grid[i] for i in xt)
                for combo in itertools.product(*opts):
                    u = sum(c[0] for c in combo)
                    ev = 0.0
                    for succ in itertools.product(*(c[1].items() for c in combo)):
                        p = 1.0
                        for _, pi in succ:
                            p *= pi
                        ev += p * V[tuple(s for s, _ in succ)]
                    best = max(best, u - lam * xsum + const + alpha * ev)
            new[J] = best
        V = new
    return V


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a
