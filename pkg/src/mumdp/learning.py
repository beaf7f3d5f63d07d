"""Model-free operation: actor-critic with associated-state updates,
post-decision greedy scheduling and stochastic price updates.

Tables of all users live in packed arrays (one row block per user) so the
compiled slot loop can run every user of an episode in one call; each user
sees its own block through ``LearnerTables``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .mdp import PolicySpec
from .model import LocalModel


@dataclass
class LearningConfig:
    lam: float = 0.0
    price_updates: bool = False
    K: int = 100
    kappa0: float = 0.1
    lambda_max: float = 10.0
    cap: int = 64
    floor: float = 0.01
    averaged: bool = False
    c_mu: float = 1.0
    e_mu: float = 0.7
    c_nu: float = 1.0
    e_nu: float = 0.8
    c_phi: float = 1.0
    e_phi: float = 0.7
    chunk: int = 10_000

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError("cap must be at least 1")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("exploration floor must lie in [0, 1]")
        if self.lam < 0 or self.lambda_max < 0:
            raise ValueError("prices must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "LearningConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)

    def steps(self):
        return (self.c_mu, self.e_mu, self.c_nu, self.e_nu, self.c_phi, self.e_phi)


class LearnerTables:
    """Critic U, actor preferences rho, post-decision values Ut and visit counts of one user."""

    def __init__(self, model: LocalModel, alpha: float, lambda_max: float,
                 U=None, rho=None, Ut=None, n_s=None, n_sx=None, n_pd=None):
        nx = len(model.x_grid)
        self.model = model
        self.alpha = alpha
        self.U = np.zeros(model.n_states) if U is None else U
        self.rho = np.zeros((model.n_states, nx)) if rho is None else rho
        self.Ut = np.zeros(model.n_pd) if Ut is None else Ut
        self.n_s = np.zeros(model.n_states, dtype=np.int64) if n_s is None else n_s
        self.n_sx = np.zeros((model.n_states, nx), dtype=np.int64) if n_sx is None else n_sx
        self.n_pd = np.zeros(model.n_pd, dtype=np.int64) if n_pd is None else n_pd
        # critic clipping interval
        self.u_lo = -lambda_max / (1.0 - alpha)
        self.u_hi = model.u_max / (1.0 - alpha)

    def probabilities(self, s: int, floor: float = 0.0) -> np.ndarray:
        return kernels.softmax_probs(self.rho[s], floor, np.empty(self.rho.shape[1]))

    def greedy_policy(self, lam: float = 0.0) -> PolicySpec:
        """Deterministic policy: most preferred x (first on ties), greedy schedule at its rate."""
        m = self.model
        xi = np.argmax(self.rho, axis=1)
        x = m.x_grid[xi]
        reward = np.empty(m.n_states)
        pd = np.empty(m.n_states, dtype=np.int64)
        for s in range(m.n_states):
            r = kernels.tdma_rate(m.peak_rates[m.state_h[s]], x[s])
            k = kernels.greedy_sched(s, r, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                                     self.Ut, self.alpha, kernels.TIE_TOL)
            reward[s] = m.sched_u[k] - lam * x[s]
            pd[s] = m.sched_pd[k]
        return PolicySpec(reward, pd, x)


# ---------------------------------------------------------------------------
# single-step operations


def resource_probabilities(rho_row: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Softmax of the preferences mixed with a uniform floor: (1-floor) softmax + floor / |grid|."""
    row = np.asarray(rho_row, dtype=np.float64)
    return kernels.softmax_probs(row, floor, np.empty(len(row)))


def select_resource(tables: LearnerTables, s: int, rng: np.random.Generator, floor: float = 0.0,
                    averaged: bool = False) -> tuple[int, float]:
    """Grid index and fraction requested in state ``s``.

    Samples from the softmax by default; ``averaged`` returns the
    probability-weighted mean fraction and the nearest grid index.
    """
    probs = tables.probabilities(s, floor)
    grid = tables.model.x_grid
    u = rng.random()
    if averaged:
        x = float(probs @ grid)
        return kernels.nearest_index(grid, x), x
    k = kernels.sample_index(probs, u)
    return k, float(grid[k])


def greedy_schedule(tables: LearnerTables, s: int, xhat: float) -> tuple[int, ...]:
    """argmax over schedules fitting rate(h, xhat) of u + alpha * Ut(post-decision).

    Only the current state, the granted fraction and the post-decision table
    are read; the channel law and size distributions never enter.
    """
    m = tables.model
    r = kernels.tdma_rate(m.peak_rates[m.state_h[s]], xhat)
    k = kernels.greedy_sched(s, r, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                             tables.Ut, tables.alpha, kernels.TIE_TOL)
    return m.sched_y[k]


def td_update(tables: LearnerTables, s: int, xi: int, xhat: float, y: Sequence[int], s_next: int,
              lam: float, cfg: LearningConfig) -> float:
    """Critic, actor and post-decision update for one (real or virtual) transition; returns delta."""
    m = tables.model
    k = m.sched_index(s, y)
    return kernels.td_update(s, xi, xhat, m.sched_u[k], m.sched_pd[k], s_next, lam, tables.alpha,
                             tables.U, tables.rho, tables.Ut, tables.n_s, tables.n_sx, tables.n_pd,
                             *cfg.steps(), tables.u_lo, tables.u_hi)


def associated_states(model: LocalModel, s: int) -> np.ndarray:
    """States sharing the phase and channel state of ``s`` (``s`` itself excluded)."""
    a = int(model.block_start[s])
    block = np.arange(a, a + int(model.block_len[s]))
    return block[block != s]


def associated_update(tables: LearnerTables, s: int, xi: int, xhat: float, lam: float, combo: int,
                      h_next: int, cfg: LearningConfig, uniforms: np.ndarray | None = None) -> list[int]:
    """Virtual transmissions in up to ``cap - 1`` associated states of ``s``.

    Each associated state schedules greedily at the granted rate and moves
    with the realised fresh-DU draw ``combo`` and next channel ``h_next``.
    When the associated set exceeds the cap a uniform sample without
    replacement is taken (partial Fisher-Yates driven by ``uniforms``).
    Returns the states updated, in order.
    """
    m = tables.model
    others = list(associated_states(m, s))
    take = len(others)
    if cfg.cap - 1 < take:
        take = cfg.cap - 1
        for q in range(take):
            w = min(q + int(uniforms[q] * (len(others) - q)), len(others) - 1)
            others[q], others[w] = others[w], others[q]
    done = []
    r = kernels.tdma_rate(m.peak_rates[m.state_h[s]], xhat)
    for sa in others[:take]:
        k = kernels.greedy_sched(sa, r, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                                 tables.Ut, tables.alpha, kernels.TIE_TOL)
        pd = int(m.sched_pd[k])
        sa_next = m.next_state(pd, combo, h_next)
        kernels.td_update(sa, xi, xhat, m.sched_u[k], pd, sa_next, lam, tables.alpha,
                          tables.U, tables.rho, tables.Ut, tables.n_s, tables.n_sx, tables.n_pd,
                          *cfg.steps(), tables.u_lo, tables.u_hi)
        done.append(int(sa))
    return done


def truncated_consumption(x_log: Sequence[float], alpha: float) -> float:
    """sum_k alpha^k x_k over one price epoch."""
    x = np.asarray(x_log, dtype=np.float64)
    return float(np.sum(alpha ** np.arange(len(x)) * x))


def stochastic_price_update(lam: float, logs: Sequence[Sequence[float]], kappa: float, alpha: float,
                            lambda_max: float = np.inf) -> float:
    """[lam + kappa (sum_i Z_i - 1/(1-alpha))]^+ with Z_i the truncated discounted use of user i."""
    g = sum(truncated_consumption(x, alpha) for x in logs) - 1.0 / (1.0 - alpha)
    return float(min(max(lam + kappa * g, 0.0), lambda_max))


# ---------------------------------------------------------------------------
# packed multi-user learner


class LearnerPool:
    """Tables of all users of an episode, packed for the compiled slot loop."""

    def __init__(self, models: Sequence[LocalModel], alpha: float, cfg: LearningConfig):
        self.models = list(models)
        self.alpha = alpha
        self.cfg = cfg
        grid = self.models[0].x_grid
        if any(not np.array_equal(m.x_grid, grid) for m in self.models):
            raise ValueError("all users must share one x grid")
        self.x_grid = grid
        M, nx = len(self.models), len(grid)
        self.state_base = np.zeros(M + 1, dtype=np.int64)
        sched_base = np.zeros(M + 1, dtype=np.int64)
        pd_base = np.zeros(M + 1, dtype=np.int64)
        look_base = np.zeros(M + 1, dtype=np.int64)
        h_base = np.zeros(M + 1, dtype=np.int64)
        for i, m in enumerate(self.models):
            self.state_base[i + 1] = self.state_base[i] + m.n_states
            sched_base[i + 1] = sched_base[i] + len(m.sched_u)
            pd_base[i + 1] = pd_base[i] + m.n_pd
            look_base[i + 1] = look_base[i] + len(m.next_lookup)
            h_base[i + 1] = h_base[i] + m.n_h
        cat = np.concatenate
        ms = self.models
        self.sched_base = sched_base
        self.user_h_base = h_base[:-1].copy()
        self.user_nh = np.array([m.n_h for m in ms], dtype=np.int64)
        self.peak_rates = cat([m.peak_rates for m in ms]).astype(np.int64)
        self.state_h = cat([m.state_h for m in ms]).astype(np.int64)
        self.block_start = cat([m.block_start + self.state_base[i] for i, m in enumerate(ms)])
        self.block_len = cat([m.block_len for m in ms]).astype(np.int64)
        self.sched_ptr = cat([m.sched_ptr[:-1] + sched_base[i] for i, m in enumerate(ms)] + [sched_base[-1:]])
        self.sched_u = cat([m.sched_u for m in ms])
        self.sched_sum = cat([m.sched_sum for m in ms]).astype(np.int64)
        self.sched_pd = cat([m.sched_pd + pd_base[i] for i, m in enumerate(ms)])
        self.pd_lookup_base = cat([m.pd_lookup_base + look_base[i] for i, m in enumerate(ms)])
        self.next_lookup = cat([m.next_lookup + self.state_base[i] for i, m in enumerate(ms)])
        n, npd = int(self.state_base[-1]), int(pd_base[-1])
        self.U = np.zeros(n)
        self.rho = np.zeros((n, nx))
        self.Ut = np.zeros(npd)
        self.n_s = np.zeros(n, dtype=np.int64)
        self.n_sx = np.zeros((n, nx), dtype=np.int64)
        self.n_pd = np.zeros(npd, dtype=np.int64)
        self.tables = []
        for i, m in enumerate(ms):
            a, b = self.state_base[i], self.state_base[i + 1]
            c, d = pd_base[i], pd_base[i + 1]
            self.tables.append(LearnerTables(m, alpha, cfg.lambda_max, self.U[a:b], self.rho[a:b], self.Ut[c:d],
                                             self.n_s[a:b], self.n_sx[a:b], self.n_pd[c:d]))
        self.u_lo = np.array([t.u_lo for t in self.tables])
        self.u_hi = np.array([t.u_hi for t in self.tables])
        self.lam_state = np.array([cfg.lam, 0.0, 1.0])
        self.Z = np.zeros(M)

    @property
    def M(self) -> int:
        return len(self.models)

    @property
    def lam(self) -> float:
        return float(self.lam_state[0])

    def run(self, t0: int, cur: np.ndarray, u_explore, combo, h_next, assoc_u, out) -> None:
        """Advance ``len(combo[0])`` slots; ``cur`` holds local state indices and is updated in place."""
        cfg = self.cfg
        n = combo.shape[1]
        g = cur + self.state_base[:-1]
        kernels.learner_chunk(
            t0, n, g, self.lam_state, self.Z, self.x_grid,
            self.user_h_base, self.peak_rates, self.state_h, self.block_start, self.block_len,
            self.sched_ptr, self.sched_u, self.sched_sum, self.sched_pd,
            self.pd_lookup_base, self.next_lookup, self.user_nh,
            self.U, self.rho, self.Ut, self.n_s, self.n_sx, self.n_pd,
            u_explore, combo, h_next, assoc_u,
            self.alpha, kernels.TIE_TOL, cfg.floor, cfg.averaged, cfg.cap,
            1 if cfg.price_updates else 0, cfg.K, cfg.kappa0, cfg.lambda_max,
            *cfg.steps(), self.u_lo, self.u_hi,
            out["state"], out["req"], out["grant"], out["sched"], out["util"], out["lam"], out["delta"])
        cur[:] = g - self.state_base[:-1]
        out["state"] -= self.state_base[:-1, None]
        out["sched"] -= self.sched_base[:-1, None]
