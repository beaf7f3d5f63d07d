"""GOP-structured traffic: data units, dependency patterns and buffer dynamics.

A GOP of ``period`` slots holds N data units (DUs).  DU ``j`` of GOP ``g`` has
absolute deadline ``initial_deadline + d_j + (g - 1) * period`` and the user
considers, at slot ``t``, every DU instance whose deadline lies in
``[t, t + stw)``.  The set of such instances (with the DAG arcs among them) is
the dependency pattern; it is deterministic and periodic in ``t``.

Buffers hold the packets left per instance; ``-1`` marks an instance that can
no longer be decoded because one of its ancestors was lost.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import ceil
from typing import Iterable, Sequence

USELESS = -1
PENDING = None  # placeholder for a fresh DU whose size is not drawn yet

Instance = tuple[int, int]  # (du_id, gop_index)


class TrafficError(ValueError):
    """Invalid traffic description or infeasible schedule."""


@dataclass(frozen=True)
class DuSpec:
    """One data unit of the GOP.

    ``sizes`` is a tuple of ``(packets, probability)`` pairs; ``parents`` are
    the DUs this one directly depends on.
    """

    id: int
    q: float
    d: int
    sizes: tuple[tuple[int, float], ...]
    V: int
    parents: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple((int(v), float(p)) for v, p in self.sizes))
        object.__setattr__(self, "parents", frozenset(int(p) for p in self.parents))

    @property
    def l_max(self) -> int:
        return max(v for v, p in self.sizes if p > 0)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(v for v, p in self.sizes if p > 0)

    @property
    def probs(self) -> tuple[float, ...]:
        return tuple(p for v, p in self.sizes if p > 0)


@dataclass(frozen=True)
class DependencyPattern:
    phase: int
    instances: tuple[Instance, ...]
    arcs: tuple[tuple[Instance, Instance], ...]  # (child, parent)

    def __len__(self):
        return len(self.instances)

    def index(self, inst: Instance) -> int:
        return self.instances.index(inst)


@dataclass(frozen=True)
class TrafficState:
    pattern: DependencyPattern
    buffers: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "buffers", tuple(int(b) for b in self.buffers))
        if len(self.buffers) != len(self.pattern):
            raise TrafficError(
                f"buffer vector has {len(self.buffers)} entries, pattern has {len(self.pattern)}"
            )


@dataclass(frozen=True)
class GopSpec:
    period: int
    dus: tuple[DuSpec, ...]
    stw: int
    initial_deadline: int = 0
    _patterns: tuple = field(default=(), init=False, repr=False, compare=False)
    _ancestors: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dus", tuple(sorted(self.dus, key=lambda du: du.id)))
        _validate_gop(self)
        object.__setattr__(self, "_ancestors", _ancestor_closure(self))
        pats = tuple(_pattern_at(self, t) for t in range(self.period))
        object.__setattr__(self, "_patterns", pats)

    @property
    def n(self) -> int:
        return len(self.dus)

    def du(self, du_id: int) -> DuSpec:
        return self.dus[du_id - 1]

    def ancestors(self, du_id: int) -> frozenset[int]:
        """Ancestors of ``du_id`` within its GOP, including itself."""
        return self._ancestors[du_id]

    def pattern(self, phase: int) -> DependencyPattern:
        return self._patterns[phase % self.period]

    def next_instances(self, phase: int) -> tuple[Instance, ...]:
        """Instances of the next phase's pattern, in GOP coordinates of ``phase``.

        Crossing the period boundary shifts every gop index by one.
        """
        nxt = self.pattern(phase + 1)
        shift = 1 if phase % self.period == self.period - 1 else 0
        return tuple((j, g + shift) for j, g in nxt.instances)


def _validate_gop(gop: GopSpec) -> None:
    if gop.period < 1:
        raise TrafficError("period must be a positive integer")
    if gop.stw < 1:
        raise TrafficError("stw must be a positive integer")
    if gop.initial_deadline < 0:
        raise TrafficError("initial_deadline must be nonnegative")
    ids = [du.id for du in gop.dus]
    if ids != list(range(1, len(ids) + 1)):
        raise TrafficError(f"DU ids must be distinct and cover 1..N, got {sorted(ids)}")
    for du in gop.dus:
        if du.q < 0:
            raise TrafficError(f"DU {du.id}: q must be nonnegative")
        if not 0 <= du.d <= gop.period:
            raise TrafficError(f"DU {du.id}: relative deadline must lie in [0, period]")
        if du.V < 1:
            raise TrafficError(f"DU {du.id}: V must be a positive integer")
        if not du.sizes:
            raise TrafficError(f"DU {du.id}: empty size distribution")
        if any(p < 0 for _, p in du.sizes) or abs(sum(p for _, p in du.sizes) - 1.0) > 1e-9:
            raise TrafficError(f"DU {du.id}: size probabilities must be nonnegative and sum to 1")
        if any(v < 1 for v in du.support):
            raise TrafficError(f"DU {du.id}: sizes must be at least one packet")
        if du.id in du.parents or not du.parents <= set(ids):
            raise TrafficError(f"DU {du.id}: parents must be other DU ids")
    if gop.dus[0].d != 0:
        raise TrafficError("DU 1 must have relative deadline 0")
    # Kahn's algorithm for acyclicity
    indeg = {du.id: len(du.parents) for du in gop.dus}
    children = {du.id: [c.id for c in gop.dus if du.id in c.parents] for du in gop.dus}
    ready = [j for j, k in indeg.items() if k == 0]
    seen = 0
    while ready:
        j = ready.pop()
        seen += 1
        for c in children[j]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if seen != len(ids):
        raise TrafficError("dependency graph has a cycle")
    for du in gop.dus:
        for p in du.parents:
            if du.d - gop.du(p).d >= gop.stw:
                raise TrafficError(
                    f"arc {du.id}->{p} violates the window condition d_j - d_j' < stw"
                )


def _ancestor_closure(gop: GopSpec) -> dict[int, frozenset[int]]:
    memo: dict[int, frozenset[int]] = {}

    def anc(j):
        if j not in memo:
            out = {j}
            for p in gop.du(j).parents:
                out |= anc(p)
            memo[j] = frozenset(out)
        return memo[j]

    for du in gop.dus:
        anc(du.id)
    # ordering assumption along every dependency path
    for du in gop.dus:
        for a in memo[du.id] - {du.id}:
            anc_du = gop.du(a)
            if du.d < anc_du.d or du.q > anc_du.q:
                raise TrafficError(
                    f"DU {du.id} depends on DU {a} but has an earlier deadline or larger q"
                )
    return memo


def _pattern_at(gop: GopSpec, t: int) -> DependencyPattern:
    T, W, d0 = gop.period, gop.stw, gop.initial_deadline
    insts = []
    for du in gop.dus:
        g = ceil((t - d0 - du.d) / T) + 1
        while d0 + du.d + (g - 1) * T < t + W:
            insts.append((du.id, g))
            g += 1
    insts.sort(key=lambda ig: (ig[1], ig[0]))
    present = set(insts)
    arcs = tuple(
        ((j, g), (p, g))
        for j, g in insts
        for p in sorted(gop.du(j).parents)
        if (p, g) in present
    )
    return DependencyPattern(phase=t % T, instances=tuple(insts), arcs=arcs)


def pattern_at(gop: GopSpec, t: int) -> DependencyPattern:
    """Dependency pattern at absolute slot ``t`` (gop indices not reduced)."""
    return _pattern_at(gop, t)


def pattern_sequence(gop: GopSpec) -> list[DependencyPattern]:
    """Patterns for slots ``0 .. period-1``; later slots repeat with gop index shifted."""
    return list(gop._patterns)


def feasible_schedules(state: TrafficState, rate: int) -> list[tuple[int, ...]]:
    """All integer schedules under the underflow and rate constraints, in lexicographic order."""
    if rate < 0:
        raise TrafficError("rate must be nonnegative")
    caps = [max(b, 0) for b in state.buffers]
    out = []
    for y in itertools.product(*(range(min(c, rate) + 1) for c in caps)):
        if sum(y) <= rate:
            out.append(y)
    return out


def check_schedule(state: TrafficState, y: Sequence[int], rate: int | None = None) -> None:
    if len(y) != len(state.buffers):
        raise TrafficError("schedule length does not match the pattern")
    for yj, bj in zip(y, state.buffers):
        if yj < 0 or yj > max(bj, 0):
            raise TrafficError(f"schedule {tuple(y)} violates the underflow constraint")
    if rate is not None and sum(y) > rate:
        raise TrafficError(f"schedule {tuple(y)} exceeds rate {rate}")


def utility(gop: GopSpec, state: TrafficState, y: Sequence[int]) -> float:
    """Distortion reduction sum_j q_j * y_j of a feasible schedule."""
    check_schedule(state, y)
    return float(sum(gop.du(j).q * yj for (j, _), yj in zip(state.pattern.instances, y)))


def post_decision(gop: GopSpec, state: TrafficState, y: Sequence[int]) -> tuple:
    """Deterministic part of the next buffer vector.

    Returns a tuple over the next pattern's instances holding the carried-over
    count, ``USELESS``, or ``PENDING`` for a fresh DU still to be drawn.
    """
    check_schedule(state, y)
    pat = state.pattern
    nxt = gop.next_instances(pat.phase)
    nxt_set = set(nxt)
    lost = set()  # expiring with too much left, or carried over useless
    for inst, b, yj in zip(pat.instances, state.buffers, y):
        if inst in nxt_set:
            if b == USELESS:
                lost.add(inst)
        elif b != USELESS and b - yj >= gop.du(inst[0]).V:
            lost.add(inst)
    cur = {inst: (b, yj) for inst, b, yj in zip(pat.instances, state.buffers, y)}
    out = []
    for j, g in nxt:
        if any((a, g) in lost for a in gop.ancestors(j)):
            out.append(USELESS)
        elif (j, g) in cur:
            b, yj = cur[(j, g)]
            out.append(b - yj)
        else:
            out.append(PENDING)
    return tuple(out)


def fill_pending(pd: tuple, draws: Iterable[int]) -> tuple[int, ...]:
    it = iter(draws)
    return tuple(next(it) if b is PENDING else b for b in pd)


def transition(gop: GopSpec, state: TrafficState, y: Sequence[int]) -> dict[TrafficState, float]:
    """Distribution of the next traffic state after scheduling ``y``."""
    pd = post_decision(gop, state, y)
    nxt_pat = gop.pattern(state.pattern.phase + 1)
    pending = [j for (j, _), b in zip(nxt_pat.instances, pd) if b is PENDING]
    out: dict[TrafficState, float] = {}
    choices = [gop.du(j).sizes for j in pending]
    for combo in itertools.product(*choices):
        p = 1.0
        for _, pj in combo:
            p *= pj
        if p == 0.0:
            continue
        nb = TrafficState(nxt_pat, fill_pending(pd, (v for v, _ in combo)))
        out[nb] = out.get(nb, 0.0) + p
    return out
