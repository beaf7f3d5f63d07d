"""Uniform-price dual: dual function, exact subgradient, projected subgradient
price iteration, and proportional scaling of over-budget requests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .mdp import JointModel, PolicySpec, Solution, discounted_occupancy, value_iteration
from .model import LocalModel


@dataclass
class PricingConfig:
    lambda0: float = 0.5
    beta0: float = 1.0
    max_iters: int = 200
    tol: float = 1e-6
    solver_tol: float = 1e-10

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("initial price must be nonnegative")
        if self.beta0 <= 0:
            raise ValueError("step size must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def step(self, k: int) -> float:
        return self.beta0 / (1.0 + k)


@dataclass
class DualPoint:
    lam: float
    value: float
    subgradient: float
    Z: list[float]
    solutions: list[Solution]

    @property
    def slope(self) -> float:
        """Subgradient of the dual function itself: d value / d lam = -(sum Z - 1/(1-alpha))."""
        return -self.subgradient


@dataclass
class PriceTrace:
    k: list[int] = field(default_factory=list)
    lam: list[float] = field(default_factory=list)
    subgradient: list[float] = field(default_factory=list)
    dual_value: list[float] = field(default_factory=list)
    converged: bool = False

    def append(self, k: int, pt: DualPoint):
        self.k.append(k)
        self.lam.append(pt.lam)
        self.subgradient.append(pt.subgradient)
        self.dual_value.append(pt.value)

    def rows(self):
        return zip(self.k, self.lam, self.subgradient, self.dual_value)

    def __len__(self):
        return len(self.k)


def _models(obj) -> list[LocalModel]:
    return obj.models() if hasattr(obj, "models") else list(obj)


def resource_consumption(sol: Solution) -> float:
    """Expected discounted resource use v^T (I - alpha P)^{-1} x of a local policy."""
    m = sol.model
    return discounted_occupancy(m, sol.pd, sol.x, sol.alpha)


class DualEvaluator:
    """Evaluates the dual function and its subgradient, warm-starting the local solves."""

    def __init__(self, models, alpha: float, tol: float = 1e-10, max_iter: int = 100_000):
        self.models = _models(models)
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self._warm = [None] * len(self.models)

    @property
    def M(self) -> int:
        return len(self.models)

    def __call__(self, lam: float, with_subgradient: bool = True) -> DualPoint:
        if lam < 0:
            raise ValueError("price must be nonnegative")
        sols, Z = [], []
        total = 0.0
        for i, m in enumerate(self.models):
            sol = value_iteration(m, lam, lam / self.M, self.alpha, self.tol, self.max_iter, self._warm[i])
            self._warm[i] = sol.values
            sols.append(sol)
            total += sol.initial_value()
            if with_subgradient:
                Z.append(resource_consumption(sol))
        g = sum(Z) - 1.0 / (1.0 - self.alpha) if with_subgradient else math.nan
        return DualPoint(float(lam), total, g, Z, sols)


def dual_value(models, lam: float, alpha: float, tol: float = 1e-10) -> float:
    """sum_i v_i^T U_i(., lam), each U_i solved with the lam / M constant."""
    return DualEvaluator(models, alpha, tol)(lam, with_subgradient=False).value


def subgradient(models, lam: float, alpha: float, tol: float = 1e-10) -> float:
    """sum_i Z_i - 1 / (1 - alpha) at the optimal local policies for ``lam``."""
    return DualEvaluator(models, alpha, tol)(lam).subgradient


def price_step(lam: float, g: float, beta: float) -> float:
    return max(0.0, lam + beta * g)


def price_iterate(models, cfg: PricingConfig, alpha: float) -> tuple[float, PriceTrace]:
    """Projected subgradient iteration on the price; returns the best-dual price seen."""
    ev = DualEvaluator(models, alpha, cfg.solver_tol)
    trace = PriceTrace()
    pt = ev(cfg.lambda0)
    trace.append(0, pt)
    best_lam, best_val = pt.lam, pt.value
    lam = pt.lam
    for k in range(cfg.max_iters):
        new = price_step(lam, pt.subgradient, cfg.step(k))
        moved = abs(new - lam)
        lam = new
        pt = ev(lam)
        trace.append(k + 1, pt)
        if pt.value < best_val:
            best_lam, best_val = pt.lam, pt.value
        if moved <= cfg.tol:
            trace.converged = True
            break
    return best_lam, trace


def grid_minimizer(models, alpha: float, grid: Sequence[float], tol: float = 1e-10,
                   refine: float | None = None) -> tuple[float, float, np.ndarray]:
    """Smallest-index minimiser of the dual function over ``grid``.

    With ``refine`` set, the minimiser is then located to that width by
    bisection on the sign of the subgradient between the neighbouring grid
    points (the dual is convex and piecewise linear, so the minimum sits at
    the price where the subgradient changes sign).
    """
    grid = np.asarray(grid, dtype=np.float64)
    ev = DualEvaluator(models, alpha, tol)
    vals = np.array([ev(float(l), with_subgradient=False).value for l in grid])
    k = int(np.argmin(vals))
    lam, val = float(grid[k]), float(vals[k])
    if refine is not None:
        lo, hi = float(grid[max(k - 1, 0)]), float(grid[min(k + 1, len(grid) - 1)])
        while hi - lo > refine:
            mid = 0.5 * (lo + hi)
            if ev(mid).subgradient > 0:
                lo = mid
            else:
                hi = mid
        for cand in (lo, hi):
            v = ev(cand, with_subgradient=False).value
            if v < val:
                lam, val = cand, v
    return lam, val, vals


def scale_allocations(requests) -> np.ndarray:
    """Scale requests proportionally onto the budget when their sum exceeds 1."""
    req = np.asarray(requests, dtype=np.float64)
    if (req < 0).any():
        raise ValueError("requests must be nonnegative")
    return kernels.scale_requests(req, np.empty_like(req))


def scaled_dual_policy(joint: JointModel, solutions: Sequence[Solution]) -> PolicySpec:
    """Joint policy: every user requests its local optimal x, requests are
    scaled onto the budget, and each user schedules greedily at the granted
    rate against its own post-decision values."""
    users = joint.users
    n = joint.n_states
    reward = np.zeros(n)
    pd = np.zeros(n, dtype=np.int64)
    xs = np.zeros(n)
    req = np.empty(joint.M)
    for J in range(n):
        tau = int(joint.state_phase[J])
        mem = joint.members[J]
        for i, sol in enumerate(solutions):
            req[i] = sol.x[mem[i]]
        grant = scale_allocations(req)
        pds = []
        for i, (m, sol) in enumerate(zip(users, solutions)):
            s = int(mem[i])
            r = kernels.tdma_rate(m.peak_rates[m.state_h[s]], grant[i])
            k = kernels.greedy_sched(s, r, m.sched_ptr, m.sched_u, m.sched_sum, m.sched_pd,
                                     sol.Ut, sol.alpha, kernels.TIE_TOL)
            reward[J] += m.sched_u[k]
            pds.append(int(m.sched_pd[k]))
        pd[J] = joint.pd_index(pds, tau)
        xs[J] = grant.sum()
    return PolicySpec(reward, pd, xs)
