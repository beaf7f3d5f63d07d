"""Slot-by-slot multi-user episodes: coordinator exchange, agents, baselines, metrics.

Each slot every user reports a requested fraction, the coordinator scales
the requests onto the budget, users schedule at their granted rate, and the
exogenous randomness (channel moves, fresh DU sizes) advances every user.
That randomness comes from per-user streams, so different agents run on the
same seed face the same channel and traffic sample path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .learning import LearnerPool, LearningConfig
from .mdp import JointModel, PolicySpec, Solution, evaluate_policy, solve_local
from .model import LocalModel
from .rng import UserStreams

GRANT_TOL = 1e-12
TIE_TOL = kernels.TIE_TOL

# every episode run in this process: (label, slots, violations, max granted sum)
FEASIBILITY_AUDIT: list[tuple[str, int, int, float]] = []


class AgentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# exogenous randomness


def _safe_cdf(p: np.ndarray) -> np.ndarray:
    """Cumulative sums with every entry from the last positive mass onward set to 1."""
    cdf = np.cumsum(p, axis=-1)
    p2 = np.atleast_2d(p)
    c2 = np.atleast_2d(cdf)
    for r in range(p2.shape[0]):
        last = np.nonzero(p2[r] > 0)[0][-1]
        c2[r, last:] = 1.0
    return c2.reshape(cdf.shape)


class Exogenous:
    """Per-user channel path, fresh-size draws and agent uniforms, produced in chunks."""

    def __init__(self, model: LocalModel, streams: UserStreams, h0: int):
        self.model = model
        self.streams = streams
        self.cdf_h = _safe_cdf(model.channel.matrix)
        self.cdf_combo = [_safe_cdf(p) for p in model.combo_probs]
        self.h = h0
        self.t = 0

    def next(self, n: int, n_assoc: int = 0):
        m = self.model
        u_h = self.streams.channel.random(n)
        u_c = self.streams.sizes.random(n)
        u_x = self.streams.explore.random(n)
        assoc = self.streams.assoc.random((n, n_assoc)) if n_assoc > 0 else np.zeros((n, 0))
        h_next = kernels.markov_path(self.cdf_h, self.h, u_h, np.empty(n, dtype=np.int64))
        combo = np.empty(n, dtype=np.int64)
        for j in range(n):
            combo[j] = kernels.draw_index(self.cdf_combo[(self.t + j) % m.period], u_c[j])
        if n:
            self.h = int(h_next[-1])
        self.t += n
        return h_next, combo, u_x, assoc


def initial_state(model: LocalModel, streams: UserStreams) -> int:
    cdf = np.cumsum(model.v0)
    u = streams.initial.random()
    s = int(np.searchsorted(cdf, u, side="right"))
    # land on a state with positive mass even if rounding left u past the end
    support = np.nonzero(model.v0 > 0)[0]
    return int(min(max(s, support[0]), support[-1]))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsLog:
    names: list[str]
    alpha: float
    x_grid: np.ndarray
    state: np.ndarray  # (M, T) local state index at the start of the slot
    req: np.ndarray
    grant: np.ndarray
    sched: np.ndarray  # (M, T) schedule index within the user's model
    util: np.ndarray
    lam: np.ndarray
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.names)

    @property
    def horizon(self) -> int:
        return self.util.shape[1]

    def discount_weights(self) -> np.ndarray:
        return self.alpha ** np.arange(self.horizon)

    def discounted_utility(self) -> np.ndarray:
        """Per-user sum_t alpha^t u_t."""
        return self.util @ self.discount_weights()

    def total_discounted(self) -> float:
        return float(self.discounted_utility().sum())

    def cumulative_discounted(self) -> np.ndarray:
        return np.cumsum(self.util * self.discount_weights(), axis=1)

    def average_utility(self) -> np.ndarray:
        return self.util.mean(axis=1) if self.horizon else np.zeros(self.M)

    def violations(self) -> int:
        return int(np.count_nonzero(self.grant.sum(axis=0) > 1.0 + GRANT_TOL))

    def max_granted(self) -> float:
        return float(self.grant.sum(axis=0).max()) if self.horizon else 0.0


def _empty_log(names, alpha, grid, horizon, label):
    M = len(names)
    return MetricsLog(list(names), alpha, grid,
                      np.zeros((M, horizon), dtype=np.int64), np.zeros((M, horizon)), np.zeros((M, horizon)),
                      np.zeros((M, horizon), dtype=np.int64), np.zeros((M, horizon)), np.zeros((M, horizon)),
                      label)


def _audit(log: MetricsLog) -> None:
    FEASIBILITY_AUDIT.append((log.label, log.horizon, log.violations(), log.max_granted()))


# ---------------------------------------------------------------------------
# agents driven by the Python slot loop


class Agent:
    """Per-slot decision maker for all users of an episode."""

    label = "agent"
    n_assoc = 0

    def start(self, models: Sequence[LocalModel], alpha: float) -> None:
        self.models = list(models)
        self.alpha = alpha

    def price(self) -> float:
        return 0.0

    def requests(self, t: int, cur: np.ndarray, u_explore: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def schedule(self, t: int, i: int, s: int, xhat: float, rate: int) -> int:
        raise NotImplementedError

    def observe(self, t, i, s, xi, xhat, k, s_next, combo, h_next, assoc) -> None:
        pass

    def end_slot(self, t: int, req: np.ndarray) -> None:
        pass


def best_utility_tables(model: LocalModel):
    """best_u[s, xi], best_k[s, xi]: largest one-slot utility at rate(h, x) and the first schedule reaching it."""
    n, nx = model.n_states, len(model.x_grid)
    best_u = np.zeros((n, nx))
    best_k = np.zeros((n, nx), dtype=np.int64)
    for s in range(n):
        a, b = model.sched_ptr[s], model.sched_ptr[s + 1]
        u = model.sched_u[a:b]
        sums = model.sched_sum[a:b]
        for xi, x in enumerate(model.x_grid):
            r = model.rate(int(model.state_h[s]), float(x))
            vals = np.where(sums <= r, u, -np.inf)
            top = vals.max()
            k = int(np.nonzero(vals >= top - TIE_TOL * (1.0 + abs(top)))[0][0])
            best_u[s, xi] = top
            best_k[s, xi] = a + k
    return best_u, best_k


def priority_order(model: LocalModel, s: int) -> list[int]:
    """Positions of the state's instances by descending q, canonical order on ties."""
    gop = model.gop
    inst = model.patterns[int(model.state_phase[s])].instances
    return sorted(range(len(inst)), key=lambda j: (-gop.du(inst[j][0]).q, j))


def priority_schedule(model: LocalModel, s: int, rate: int) -> tuple[int, ...]:
    """Fill the rate by descending distortion impact, skipping DUs that are useless
    or have a useless ancestor in the window."""
    st = model.state(s)
    pat = st.traffic.pattern
    b = st.buffers
    useless = {inst for inst, bj in zip(pat.instances, b) if bj < 0}
    y = [0] * len(b)
    left = rate
    for j in priority_order(model, s):
        du_id, g = pat.instances[j]
        if b[j] <= 0 or any((a, g) in useless for a in model.gop.ancestors(du_id)):
            continue
        y[j] = min(b[j], left)
        left -= y[j]
    return tuple(y)


class ExactAgent(Agent):
    """Local optimal policies at a fixed price; greedy schedule at the granted rate."""

    label = "exact"

    def __init__(self, solutions: Sequence[Solution]):
        self.solutions = list(solutions)
        self.lam = self.solutions[0].lam

    def price(self):
        return self.lam

    def requests(self, t, cur, u_explore):
        return np.array([sol.x[s] for sol, s in zip(self.solutions, cur)])

    def schedule(self, t, i, s, xhat, rate):
        m, sol = self.models[i], self.solutions[i]
        return int(kernels.greedy_sched(s, rate, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                                        sol.Ut, self.alpha, TIE_TOL))


class JointAgent(Agent):
    """Centralised policy of a stage-constrained joint solution."""

    label = "joint"

    def __init__(self, joint: JointModel, solution: Solution):
        self.joint, self.solution = joint, solution
        self._a = None

    def requests(self, t, cur, u_explore):
        J = self.joint.index(cur, t % self.joint.period)
        self._a = int(self.solution.best[J])
        return self.joint.x_grid[self.joint.act_xt[self._a]]

    def schedule(self, t, i, s, xhat, rate):
        k = int(self.joint.act_sk[self._a, i])
        if self.models[i].sched_sum[k] > rate:
            raise AgentError("joint action does not fit the granted rate")
        return k


class PriorityAgent(Agent):
    """Fixed per-user fractions, schedules filled by descending distortion impact."""

    label = "priority"

    def __init__(self, fixed_x: Sequence[float]):
        self.fixed_x = np.array(fixed_x, dtype=np.float64)

    def start(self, models, alpha):
        super().start(models, alpha)
        if len(self.fixed_x) != len(models):
            raise AgentError("one fixed fraction per user is required")
        self._cache = [dict() for _ in models]

    def requests(self, t, cur, u_explore):
        return self.fixed_x.copy()

    def schedule(self, t, i, s, xhat, rate):
        key = (s, rate)
        c = self._cache[i]
        if key not in c:
            c[key] = self.models[i].sched_index(s, priority_schedule(self.models[i], s, rate))
        return c[key]


class FixedForesightedAgent(Agent):
    """Fixed per-user fractions with the optimal schedule for that fraction."""

    label = "foresighted-fixed"

    def __init__(self, fixed_x: Sequence[float], solutions: Sequence[Solution]):
        self.fixed_x = np.array(fixed_x, dtype=np.float64)
        self.solutions = list(solutions)

    def requests(self, t, cur, u_explore):
        return self.fixed_x.copy()

    def schedule(self, t, i, s, xhat, rate):
        m, sol = self.models[i], self.solutions[i]
        return int(kernels.greedy_sched(s, rate, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                                        sol.Ut, self.alpha, TIE_TOL))


def fixed_allocation_values(model: LocalModel, x: float, alpha: float, tol: float = 1e-10) -> tuple[float, float]:
    """Exact discounted utility, from the model's initial distribution, of the
    optimal schedule policy and of the priority schedule when the user always
    holds fraction ``x``."""
    fixed = LocalModel(model.gop, model.channel, (x,))
    sol = solve_local(fixed, 0.0, alpha, tol=tol)
    foresighted = evaluate_policy(fixed, sol, alpha, v=model.v0).value
    reward = np.empty(fixed.n_states)
    pd = np.empty(fixed.n_states, dtype=np.int64)
    for st in range(fixed.n_states):
        r = fixed.rate(int(fixed.state_h[st]), float(x))
        k = fixed.sched_index(st, priority_schedule(fixed, st, r))
        reward[st] = fixed.sched_u[k]
        pd[st] = fixed.sched_pd[k]
    priority = evaluate_policy(fixed, PolicySpec(reward, pd), alpha, v=model.v0).value
    return foresighted, priority


def feasible_tuples(grid: np.ndarray, M: int) -> np.ndarray:
    """Grid-index tuples with sum x <= 1, lexicographic order."""
    out = [xt for xt in itertools.product(range(len(grid)), repeat=M)
           if sum(grid[i] for i in xt) <= 1.0 + GRANT_TOL]
    return np.array(out, dtype=np.int64).reshape(-1, M)


class MyopicAgent(Agent):
    """Per-slot exact maximisation of total utility over the x-grid simplex.

    Ties go to the lexicographically smallest x tuple, then to the first
    maximising schedule.
    """

    label = "myopic"

    def start(self, models, alpha):
        super().start(models, alpha)
        self.tables = [best_utility_tables(m) for m in models]
        self.tuples = feasible_tuples(models[0].x_grid, len(models))
        self._xt = None

    def requests(self, t, cur, u_explore):
        vals = np.zeros(len(self.tuples))
        for i, s in enumerate(cur):
            vals += self.tables[i][0][s, self.tuples[:, i]]
        top = vals.max()
        a = int(np.nonzero(vals >= top - TIE_TOL * (1.0 + abs(top)))[0][0])
        self._xt = self.tuples[a]
        return self.models[0].x_grid[self._xt]

    def schedule(self, t, i, s, xhat, rate):
        return int(self.tables[i][1][s, self._xt[i]])


class MyopicDualAgent(Agent):
    """Per-slot scalar-price dual of the one-shot problem.

    Each slot the price is iterated, warm-started from the previous slot,
    with steps beta0 / (1 + k) until it moves by at most ``tol``; users then
    request their priced best fraction and requests are scaled onto the
    budget.  Iteration counts per slot are kept in ``iterations``.
    """

    label = "myopic-dual"

    def __init__(self, tol: float = 1e-4, beta0: float = 1.0, max_iters: int = 10_000, lam0: float = 0.0):
        self.tol, self.beta0, self.max_iters = tol, beta0, max_iters
        self.lam = lam0
        self.iterations: list[int] = []
        self.prices: list[float] = []

    def start(self, models, alpha):
        super().start(models, alpha)
        self.tables = [best_utility_tables(m) for m in models]
        self.grid = models[0].x_grid

    def price(self):
        return self.lam

    def _choices(self, cur, lam):
        xi = np.empty(len(cur), dtype=np.int64)
        for i, s in enumerate(cur):
            v = self.tables[i][0][s] - lam * self.grid
            top = v.max()
            xi[i] = int(np.nonzero(v >= top - TIE_TOL * (1.0 + abs(top)))[0][0])
        return xi

    def requests(self, t, cur, u_explore):
        lam = self.lam
        xi = self._choices(cur, lam)
        k = 0
        while k < self.max_iters:
            g = float(self.grid[xi].sum()) - 1.0
            new = max(0.0, lam + self.beta0 / (1.0 + k) * g)
            k += 1
            moved = abs(new - lam)
            lam = new
            xi = self._choices(cur, lam)
            if moved <= self.tol:
                break
        self.lam = lam
        self.iterations.append(k)
        self.prices.append(lam)
        self._xi = xi
        return self.grid[xi]

    def schedule(self, t, i, s, xhat, rate):
        m = self.models[i]
        a, b = m.sched_ptr[s], m.sched_ptr[s + 1]
        vals = np.where(m.sched_sum[a:b] <= rate, m.sched_u[a:b], -np.inf)
        top = vals.max()
        return int(a + np.nonzero(vals >= top - TIE_TOL * (1.0 + abs(top)))[0][0])


class StandardLearnerAgent(Agent):
    """Single-state actor-critic in a plain slot loop (one table update per user per slot)."""

    label = "learner-standard"

    def __init__(self, cfg: LearningConfig):
        self.cfg = cfg

    def start(self, models, alpha):
        super().start(models, alpha)
        from .learning import LearnerTables
        self.tables = [LearnerTables(m, alpha, self.cfg.lambda_max) for m in models]
        self.lam_state = np.array([self.cfg.lam, 0.0, 1.0])
        self.Z = np.zeros(len(models))
        self._xi = np.zeros(len(models), dtype=np.int64)
        self._probs = np.empty(len(models[0].x_grid))

    def price(self):
        return float(self.lam_state[0])

    def requests(self, t, cur, u_explore):
        grid = self.models[0].x_grid
        req = np.empty(len(cur))
        for i, s in enumerate(cur):
            p = kernels.softmax_probs(self.tables[i].rho[s], self.cfg.floor, self._probs)
            if self.cfg.averaged:
                req[i] = _weighted(p, grid)
                self._xi[i] = kernels.nearest_index(grid, req[i])
            else:
                k = kernels.sample_index(p, u_explore[i])
                self._xi[i] = k
                req[i] = grid[k]
        return req

    def schedule(self, t, i, s, xhat, rate):
        m, tb = self.models[i], self.tables[i]
        return int(kernels.greedy_sched(s, rate, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                                        tb.Ut, self.alpha, TIE_TOL))

    def observe(self, t, i, s, xi, xhat, k, s_next, combo, h_next, assoc):
        m, tb = self.models[i], self.tables[i]
        c = self.cfg
        kernels.td_update(s, self._xi[i], xhat, m.sched_u[k], m.sched_pd[k], s_next, self.lam_state[0],
                          self.alpha, tb.U, tb.rho, tb.Ut, tb.n_s, tb.n_sx, tb.n_pd,
                          c.c_mu, c.e_mu, c.c_nu, c.e_nu, c.c_phi, c.e_phi, tb.u_lo, tb.u_hi)

    def end_slot(self, t, req):
        if self.cfg.price_updates:
            kernels.price_epoch_step(t, req, self.Z, self.lam_state, self.alpha, self.cfg.K,
                                     self.cfg.kappa0, self.cfg.lambda_max)


def _weighted(p, grid):
    acc = 0.0
    for k in range(len(p)):
        acc += p[k] * grid[k]
    return acc


# ---------------------------------------------------------------------------
# episode drivers


def _check_on_grid(req: np.ndarray, grid: np.ndarray, label: str) -> None:
    for x in req:
        if not np.any(grid == x):
            raise AgentError(f"{label} agent requested x={x} outside the grid")


def run_episode(models: Sequence[LocalModel], names: Sequence[str], alpha: float, agent: Agent | LearningConfig,
                horizon: int, seed: int, label: str | None = None, check_grid: bool = True) -> MetricsLog:
    """Simulate ``horizon`` slots; a ``LearningConfig`` selects the compiled multi-state learner."""
    if isinstance(agent, LearningConfig):
        return run_learner(models, names, alpha, agent, horizon, seed, label)
    models = list(models)
    M = len(models)
    grid = models[0].x_grid
    label = label or agent.label
    log = _empty_log(names, alpha, grid, horizon, label)
    streams = [UserStreams(seed, n) for n in names]
    cur = np.array([initial_state(m, st) for m, st in zip(models, streams)], dtype=np.int64)
    exo = [Exogenous(m, st, int(m.state_h[s])) for m, st, s in zip(models, streams, cur)]
    agent.start(models, alpha)
    chunk = 4096
    t = 0
    while t < horizon:
        n = min(chunk, horizon - t)
        paths = [e.next(n, agent.n_assoc) for e in exo]
        for j in range(n):
            ux = np.array([p[2][j] for p in paths])
            req = np.asarray(agent.requests(t, cur, ux), dtype=np.float64)
            if check_grid:
                _check_on_grid(req, grid, label)
            grant = kernels.scale_requests(req, np.empty(M))
            lam = agent.price()
            for i, m in enumerate(models):
                s = int(cur[i])
                r = kernels.tdma_rate(m.peak_rates[m.state_h[s]], grant[i])
                k = agent.schedule(t, i, s, float(grant[i]), r)
                if m.sched_sum[k] > r or not (m.sched_ptr[s] <= k < m.sched_ptr[s + 1]):
                    raise AgentError(f"{label} agent returned an infeasible schedule")
                h2, cb, _, assoc = paths[i]
                s_next = m.next_state(int(m.sched_pd[k]), int(cb[j]), int(h2[j]))
                agent.observe(t, i, s, None, float(grant[i]), k, s_next, int(cb[j]), int(h2[j]), assoc[j])
                log.state[i, t] = s
                log.req[i, t] = req[i]
                log.grant[i, t] = grant[i]
                log.sched[i, t] = k - m.sched_ptr[s]
                log.util[i, t] = m.sched_u[k]
                log.lam[i, t] = lam
                cur[i] = s_next
            agent.end_slot(t, req)
            t += 1
    _audit(log)
    return log


def run_learner(models: Sequence[LocalModel], names: Sequence[str], alpha: float, cfg: LearningConfig,
                horizon: int, seed: int, label: str | None = None, pool: LearnerPool | None = None) -> MetricsLog:
    """Multi-state actor-critic episode through the compiled slot loop.

    The pool (tables) is attached to the returned log as ``extra['pool']``.
    """
    models = list(models)
    M = len(models)
    label = label or ("learner" if cfg.cap > 1 else "learner-cap1")
    log = _empty_log(names, alpha, models[0].x_grid, horizon, label)
    pool = pool or LearnerPool(models, alpha, cfg)
    streams = [UserStreams(seed, n) for n in names]
    cur = np.array([initial_state(m, st) for m, st in zip(models, streams)], dtype=np.int64)
    exo = [Exogenous(m, st, int(m.state_h[s])) for m, st, s in zip(models, streams, cur)]
    max_block = int(pool.block_len.max())
    n_assoc = cfg.cap - 1 if 1 < cfg.cap < max_block else 0
    deltas = np.zeros((M, horizon))
    t = 0
    while t < horizon:
        n = min(cfg.chunk, horizon - t)
        paths = [e.next(n, n_assoc) for e in exo]
        h_next = np.stack([p[0] for p in paths])
        combo = np.stack([p[1] for p in paths])
        ux = np.stack([p[2] for p in paths])
        assoc = np.stack([p[3] for p in paths]) if n_assoc else np.zeros((M, n, 1))
        out = {"state": np.zeros((M, n), dtype=np.int64), "req": np.zeros((M, n)), "grant": np.zeros((M, n)),
               "sched": np.zeros((M, n), dtype=np.int64), "util": np.zeros((M, n)), "lam": np.zeros((M, n)),
               "delta": np.zeros((M, n))}
        pool.run(t, cur, ux, combo, h_next, assoc, out)
        sl = slice(t, t + n)
        for i, m in enumerate(models):
            log.state[i, sl] = out["state"][i]
            log.sched[i, sl] = out["sched"][i] - m.sched_ptr[out["state"][i]]
        log.req[:, sl] = out["req"]
        log.grant[:, sl] = out["grant"]
        log.util[:, sl] = out["util"]
        log.lam[:, sl] = out["lam"]
        deltas[:, sl] = out["delta"]
        t += n
    log.extra["pool"] = pool
    log.extra["delta"] = deltas
    _audit(log)
    return log
