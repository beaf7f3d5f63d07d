"""Flat array form of a user's priced MDP.

States are enumerated per phase as ``(channel, buffers)`` with the channel
outermost, so all states sharing a phase and channel (the associated states
of the learner) form one contiguous block.

Schedules are stored per state for the largest rate the state can reach; an
action ``(x, y)`` is any schedule whose packet total fits ``rate(h, x)``.  The
transition only depends on the schedule through its post-decision state, so
expected continuation values are computed once per post-decision state.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .channel import ChannelSpec, rate
from .traffic import (
    PENDING,
    USELESS,
    GopSpec,
    TrafficState,
    feasible_schedules,
    post_decision,
)

DEFAULT_BUDGET = 10**6


class StateBudgetError(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"state space has {count} states, over the budget of {budget}")
        self.count = count
        self.budget = budget


@dataclass(frozen=True)
class UserState:
    traffic: TrafficState
    channel: int

    @property
    def phase(self) -> int:
        return self.traffic.pattern.phase

    @property
    def buffers(self) -> tuple[int, ...]:
        return self.traffic.buffers


def check_grid(x_grid: Sequence[float], require_ends: bool = False) -> tuple[float, ...]:
    grid = tuple(float(x) for x in x_grid)
    if not grid:
        raise ValueError("x grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("x grid must be strictly increasing")
    if grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValueError("x grid must lie in [0, 1]")
    if require_ends and (grid[0] != 0.0 or grid[-1] != 1.0):
        raise ValueError("x grid must contain 0 and 1")
    return grid


def _buffer_ranges(gop: GopSpec, phase: int) -> list[range]:
    return [range(USELESS, gop.du(j).l_max + 1) for j, _ in gop.pattern(phase).instances]


def state_count(gop: GopSpec, channel: ChannelSpec) -> int:
    total = 0
    for p in range(gop.period):
        total += int(np.prod([len(r) for r in _buffer_ranges(gop, p)], dtype=np.int64)) * channel.n
    return total


def enumerate_states(gop: GopSpec, channel: ChannelSpec, phase: int, budget: int = DEFAULT_BUDGET) -> list[UserState]:
    """All (buffer vector, channel) combinations of one phase, channel outermost."""
    count = state_count(gop, channel)
    if count > budget:
        raise StateBudgetError(count, budget)
    pat = gop.pattern(phase)
    bufs = list(itertools.product(*_buffer_ranges(gop, phase)))
    return [UserState(TrafficState(pat, b), h) for h in range(channel.n) for b in bufs]


class CompiledMDP:
    """Generic finite MDP in the layout the kernels expect.

    Rewards are ``act_u - lam * act_x + const``; the successor distribution of
    an action is row ``act_pd`` of the post-decision matrix ``P_pd``.
    """

    n_states: int
    act_ptr: np.ndarray
    act_u: np.ndarray
    act_x: np.ndarray
    act_pd: np.ndarray
    P_pd: sp.csr_matrix
    v0: np.ndarray

    def _finish_pd(self, rows, cols, vals, n_pd):
        P = sp.csr_matrix((vals, (rows, cols)), shape=(n_pd, self.n_states))
        P.sum_duplicates()
        P.sort_indices()
        self.P_pd = P
        self.pd_ptr = P.indptr.astype(np.int64)
        self.pd_idx = P.indices.astype(np.int64)
        self.pd_prob = P.data.astype(np.float64)

    @property
    def n_pd(self) -> int:
        return self.P_pd.shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.act_u)

    def action_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), np.diff(self.act_ptr))


class LocalModel(CompiledMDP):
    """Compiled single-user MDP for one (GOP, channel, x grid)."""

    def __init__(self, gop: GopSpec, channel: ChannelSpec, x_grid: Sequence[float],
                 budget: int = DEFAULT_BUDGET, initial: str = "uniform"):
        self.gop = gop
        self.channel = channel
        self.x_grid = np.array(check_grid(x_grid), dtype=np.float64)
        count = state_count(gop, channel)
        if count > budget:
            raise StateBudgetError(count, budget)
        self.n_states = count
        self.period = gop.period
        H = channel.n
        self.n_h = H
        self.peak_rates = np.array(channel.peak_rates, dtype=np.int64)
        self.patterns = [gop.pattern(p) for p in range(gop.period)]
        self.ranges = [_buffer_ranges(gop, p) for p in range(gop.period)]
        self.radix = [[len(r) for r in rs] for rs in self.ranges]
        self.nb = [int(np.prod(rx, dtype=np.int64)) for rx in self.radix]
        offs = np.zeros(gop.period + 1, dtype=np.int64)
        for p in range(gop.period):
            offs[p + 1] = offs[p] + self.nb[p] * H
        self.state_off = offs
        self.state_phase = np.repeat(np.arange(gop.period), [self.nb[p] * H for p in range(gop.period)])
        self.state_h = np.concatenate([np.repeat(np.arange(H), self.nb[p]) for p in range(gop.period)])
        self.block_start = np.concatenate(
            [offs[p] + np.repeat(np.arange(H), self.nb[p]) * self.nb[p] for p in range(gop.period)]
        ).astype(np.int64)
        self.block_len = np.concatenate(
            [np.full(self.nb[p] * H, self.nb[p]) for p in range(gop.period)]
        ).astype(np.int64)
        self._build_new_draws()
        self._build_schedules()
        self._build_actions()
        self.v0 = self.initial_distribution(initial)

    # -- indexing -------------------------------------------------------------

    def buffer_index(self, phase: int, buffers: Sequence[int]) -> int:
        k = 0
        for b, r in zip(buffers, self.radix[phase]):
            k = k * r + (b - USELESS)
        return k

    def index(self, state: UserState) -> int:
        p = state.phase
        return int(self.state_off[p] + state.channel * self.nb[p] + self.buffer_index(p, state.buffers))

    def buffers_of(self, s: int) -> tuple[int, ...]:
        p = int(self.state_phase[s])
        k = int(s - self.state_off[p]) % self.nb[p]
        out = []
        for r in reversed(self.radix[p]):
            out.append(k % r + USELESS)
            k //= r
        return tuple(reversed(out))

    def state(self, s: int) -> UserState:
        p = int(self.state_phase[s])
        return UserState(TrafficState(self.patterns[p], self.buffers_of(s)), int(self.state_h[s]))

    def rate(self, h: int, x: float) -> int:
        return rate(self.channel, h, x)

    # -- construction ---------------------------------------------------------

    def _build_new_draws(self):
        """Fresh instances entering at each phase change and the joint law of their sizes."""
        gop = self.gop
        self.new_pos, self.new_support, self.combo_probs = [], [], []
        for p in range(gop.period):
            cur = set(self.patterns[p].instances)
            nxt = gop.next_instances(p)
            pos = [i for i, inst in enumerate(nxt) if inst not in cur]
            sup = [gop.du(nxt[i][0]).support for i in pos]
            prb = [gop.du(nxt[i][0]).probs for i in pos]
            probs = np.array([np.prod(c) for c in itertools.product(*prb)], dtype=np.float64)
            self.new_pos.append(pos)
            self.new_support.append(sup)
            self.combo_probs.append(probs)

    def _build_schedules(self):
        gop, H = self.gop, self.n_h
        q_of = [np.array([gop.du(j).q for j, _ in pat.instances]) for pat in self.patterns]
        rmax = int(self.peak_rates.max()) if H else 0
        pd_key: dict = {}
        pd_rows, pd_cols, pd_vals = [], [], []
        sched_ptr = [0]
        sched_u, sched_sum, sched_pd, sched_y = [], [], [], []
        lookup_base, lookup = [], []
        P_h = self.channel.matrix
        for p in range(gop.period):
            pat = self.patterns[p]
            pn = (p + 1) % gop.period
            # schedules and post-decision tuples depend on buffers only
            per_buf = []
            for b in itertools.product(*self.ranges[p]):
                ts = TrafficState(pat, b)
                ys = feasible_schedules(ts, rmax)
                per_buf.append([(y, sum(y), float(np.dot(q_of[p], y)), post_decision(gop, ts, y)) for y in ys])
            for h in range(H):
                rh = int(self.peak_rates[h])
                for entries in per_buf:
                    for y, tot, u, pdt in entries:
                        if tot > rh:
                            continue
                        key = (p, pdt, h)
                        k = pd_key.get(key)
                        if k is None:
                            k = len(pd_key)
                            pd_key[key] = k
                            self._pd_successors(k, p, pn, pdt, h, P_h, pd_rows, pd_cols, pd_vals, lookup_base, lookup)
                        sched_y.append(y)
                        sched_sum.append(tot)
                        sched_u.append(u)
                        sched_pd.append(k)
                    sched_ptr.append(len(sched_u))
        self.sched_ptr = np.array(sched_ptr, dtype=np.int64)
        self.sched_u = np.array(sched_u, dtype=np.float64)
        self.sched_sum = np.array(sched_sum, dtype=np.int64)
        self.sched_pd = np.array(sched_pd, dtype=np.int64)
        self.sched_y = sched_y
        self.pd_keys = list(pd_key)
        self.pd_phase = np.array([k[0] for k in self.pd_keys], dtype=np.int64)
        self.pd_lookup_base = np.array(lookup_base, dtype=np.int64)
        self.next_lookup = np.array(lookup, dtype=np.int64)
        self.pd_index = pd_key
        self._finish_pd(pd_rows, pd_cols, pd_vals, len(pd_key))
        self.u_max = float(self.sched_u.max()) if len(self.sched_u) else 0.0

    def _pd_successors(self, k, p, pn, pdt, h, P_h, rows, cols, vals, lookup_base, lookup):
        H = self.n_h
        pos = self.new_pos[p]
        base_n = self.state_off[pn]
        lookup_base.append(len(lookup))
        for combo, pc in zip(itertools.product(*self.new_support[p]), self.combo_probs[p]):
            full = list(pdt)
            for i, v in zip(pos, combo):
                if full[i] is PENDING:
                    full[i] = v
            kb = self.buffer_index(pn, full)
            for h2 in range(H):
                s2 = int(base_n + h2 * self.nb[pn] + kb)
                lookup.append(s2)
                pr = pc * P_h[h, h2]
                if pr > 0.0:
                    rows.append(k)
                    cols.append(s2)
                    vals.append(pr)

    def _build_actions(self):
        grid = self.x_grid
        act_ptr = [0]
        act_x, act_xi, act_sched = [], [], []
        for s in range(self.n_states):
            h = int(self.state_h[s])
            a, b = self.sched_ptr[s], self.sched_ptr[s + 1]
            sums = self.sched_sum[a:b]
            for xi, x in enumerate(grid):
                r = self.rate(h, x)
                ks = np.nonzero(sums <= r)[0] + a
                act_sched.extend(ks.tolist())
                act_x.extend([x] * len(ks))
                act_xi.extend([xi] * len(ks))
            act_ptr.append(len(act_sched))
        self.act_ptr = np.array(act_ptr, dtype=np.int64)
        self.act_sched = np.array(act_sched, dtype=np.int64)
        self.act_x = np.array(act_x, dtype=np.float64)
        self.act_xi = np.array(act_xi, dtype=np.int64)
        self.act_u = self.sched_u[self.act_sched]
        self.act_pd = self.sched_pd[self.act_sched]

    def initial_distribution(self, mode: str = "uniform") -> np.ndarray:
        """Distribution of the phase-0 state.

        ``uniform``: uniform over channel states and buffer vectors whose
        entries are all possible fresh sizes.  ``draw``: buffers drawn from the
        size distributions, channel uniform.
        """
        v = np.zeros(self.n_states)
        pat = self.patterns[0]
        dus = [self.gop.du(j) for j, _ in pat.instances]
        for vals in itertools.product(*(du.sizes for du in dus)):
            b = [c for c, _ in vals]
            if mode == "uniform":
                w = 1.0 if all(pr > 0 for _, pr in vals) else 0.0
            elif mode == "draw":
                w = float(np.prod([pr for _, pr in vals]))
            else:
                raise ValueError(f"unknown initial distribution mode {mode!r}")
            kb = self.buffer_index(0, b)
            for h in range(self.n_h):
                v[self.state_off[0] + h * self.nb[0] + kb] += w
        return v / v.sum()

    def schedules(self, s: int, rate_: int | None = None) -> range:
        """Global schedule indices of state ``s``, optionally restricted to a rate."""
        a, b = int(self.sched_ptr[s]), int(self.sched_ptr[s + 1])
        if rate_ is None:
            return range(a, b)
        return [k for k in range(a, b) if self.sched_sum[k] <= rate_]

    def post_decision_index(self, s: int, y: Sequence[int]) -> int:
        st = self.state(s)
        return self.pd_index[(st.phase, post_decision(self.gop, st.traffic, y), st.channel)]

    def sched_index(self, s: int, y: Sequence[int]) -> int:
        y = tuple(y)
        for k in range(self.sched_ptr[s], self.sched_ptr[s + 1]):
            if self.sched_y[k] == y:
                return int(k)
        raise KeyError(f"schedule {y} is not feasible in state {s}")

    def next_state(self, pd: int, combo: int, h_next: int) -> int:
        return int(self.next_lookup[self.pd_lookup_base[pd] + combo * self.n_h + h_next])

    def sample_combo(self, phase: int, u: float) -> int:
        cdf = np.cumsum(self.combo_probs[phase])
        return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
