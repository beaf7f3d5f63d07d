"""Exact solvers: priced local value iteration, joint (centralised) value
iteration, and exact policy evaluation by sparse linear solve."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .model import CompiledMDP, LocalModel, UserState

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000
GRANT_TOL = 1e-12


class SolverError(RuntimeError):
    def __init__(self, msg: str, residual: float = math.nan):
        super().__init__(msg)
        self.residual = residual


@dataclass
class Solution:
    """Value table and greedy policy of a compiled MDP at one price.

    ``Ut`` holds the expected continuation value of every post-decision
    state under the value iterate the policy was extracted from.
    """

    model: CompiledMDP
    values: np.ndarray
    best: np.ndarray
    Ut: np.ndarray
    lam: float
    const: float
    alpha: float
    iterations: int
    residual: float

    @property
    def x(self) -> np.ndarray:
        return self.model.act_x[self.best]

    @property
    def pd(self) -> np.ndarray:
        return self.model.act_pd[self.best]

    def initial_value(self, v: np.ndarray | None = None) -> float:
        v = self.model.v0 if v is None else v
        return float(v @ self.values)

    # lookups by state object for the local model
    def value(self, state: UserState) -> float:
        return float(self.values[self.model.index(state)])

    def policy(self, state: UserState) -> tuple[float, tuple[int, ...]]:
        m = self.model
        a = self.best[m.index(state)]
        return float(m.act_x[a]), m.sched_y[m.act_sched[a]]

    def table(self):
        """Rows (phase, buffers, channel, value, x, y) for every state."""
        m = self.model
        for s in range(m.n_states):
            a = self.best[s]
            yield (int(m.state_phase[s]), m.buffers_of(s), int(m.state_h[s]),
                   float(self.values[s]), float(m.act_x[a]), m.sched_y[m.act_sched[a]])


def value_iteration(model: CompiledMDP, lam: float, const: float, alpha: float,
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    init: np.ndarray | None = None, track: list | None = None) -> Solution:
    """Iterate the Bellman operator until successive iterates differ by at most ``tol``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    n = model.n_states
    V = np.zeros(n) if init is None else np.array(init, dtype=np.float64)
    V_out = np.empty(n)
    best = np.zeros(n, dtype=np.int64)
    Ut = np.zeros(model.n_pd)
    res = math.inf
    for it in range(1, max_iter + 1):
        res = kernels.bellman_sweep(V, model.pd_ptr, model.pd_idx, model.pd_prob,
                                    model.act_ptr, model.act_u, model.act_x, model.act_pd,
                                    float(lam), float(const), float(alpha), kernels.TIE_TOL,
                                    Ut, V_out, best)
        if track is not None:
            track.append(res)
        V, V_out = V_out, V
        if res <= tol:
            return Solution(model, V.copy(), best.copy(), Ut.copy(), float(lam), float(const),
                            float(alpha), it, float(res))
    raise SolverError(f"value iteration did not reach {tol} in {max_iter} sweeps (residual {res:.3e})", res)


def solve_local(model: LocalModel, lam: float, alpha: float, M: int = 1,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                init: np.ndarray | None = None) -> Solution:
    """Solve one user's priced MDP.

    The reward is ``u - lam * x``, plus ``lam / M`` when ``M >= 2`` (the
    multi-user local problem); the constant shifts every value by
    ``lam / (M (1 - alpha))`` and never changes the policy.
    """
    if lam < 0:
        raise ValueError("price must be nonnegative")
    const = lam / M if M >= 2 else 0.0
    return value_iteration(model, lam, const, alpha, tol, max_iter, init)


# ---------------------------------------------------------------------------
# policy evaluation


@dataclass
class PolicySpec:
    """A stationary policy given by its per-state reward and post-decision row."""

    reward: np.ndarray
    pd: np.ndarray
    x: np.ndarray | None = None


def policy_from_actions(model: CompiledMDP, best: np.ndarray, lam: float = 0.0, const: float = 0.0) -> PolicySpec:
    return PolicySpec(model.act_u[best] - lam * model.act_x[best] + const,
                      model.act_pd[best], model.act_x[best])


@dataclass
class Evaluation:
    value: float
    values: np.ndarray
    residual: float


def evaluate_policy(model: CompiledMDP, policy: PolicySpec | Solution | np.ndarray, alpha: float,
                    v: np.ndarray | None = None, tol: float = 1e-9) -> Evaluation:
    """Exact expected discounted reward of a stationary policy from ``v``."""
    if isinstance(policy, Solution):
        policy = policy_from_actions(model, policy.best, policy.lam, policy.const)
    elif isinstance(policy, np.ndarray):
        policy = policy_from_actions(model, policy)
    P = model.P_pd[policy.pd]
    A = (sp.identity(model.n_states, format="csr") - alpha * P).tocsc()
    V = spla.spsolve(A, policy.reward)
    V = np.atleast_1d(V)
    resid = float(np.max(np.abs(A @ V - policy.reward))) if model.n_states else 0.0
    if resid > tol * (1.0 + float(np.max(np.abs(V)))):
        raise SolverError(f"policy evaluation residual {resid:.3e} above tolerance", resid)
    v = model.v0 if v is None else v
    return Evaluation(float(v @ V), V, resid)


def discounted_occupancy(model: CompiledMDP, pd: np.ndarray, f: np.ndarray, alpha: float,
                         v: np.ndarray | None = None, tol: float = 1e-10) -> float:
    """v^T (I - alpha P)^{-1} f for the chain whose rows are ``P_pd[pd]``."""
    P = model.P_pd[pd]
    A = (sp.identity(model.n_states, format="csr") - alpha * P).tocsc()
    w = np.atleast_1d(spla.spsolve(A, f))
    resid = float(np.max(np.abs(A @ w - f))) if model.n_states else 0.0
    if resid > tol * (1.0 + float(np.max(np.abs(w)))):
        raise SolverError(f"linear solve residual {resid:.3e} above tolerance", resid)
    v = model.v0 if v is None else v
    return float(v @ w)


# ---------------------------------------------------------------------------
# joint model


class JointModel(CompiledMDP):
    """Product MDP of several users.

    With ``relaxed=False`` joint actions satisfy sum(x) <= 1 per slot;
    with ``relaxed=True`` every grid tuple is allowed, which is the
    problem whose priced value decomposes into per-user values.
    """

    def __init__(self, users: Sequence[LocalModel], relaxed: bool = False, budget: int = 10**6):
        self.users = list(users)
        self.relaxed = relaxed
        grid = self.users[0].x_grid
        if any(not np.array_equal(u.x_grid, grid) for u in self.users):
            raise ValueError("all users must share one x grid")
        self.x_grid = grid
        self.period = math.lcm(*(u.period for u in self.users))
        L = self.period
        self._blocks = []  # per phase: per-user (state offset, count, pd offset, pd count)
        for tau in range(L):
            row = []
            for u in self.users:
                p = tau % u.period
                s0 = int(u.state_off[p])
                ns = int(u.state_off[p + 1] - u.state_off[p])
                pds = np.nonzero(u.pd_phase == p)[0]
                if len(pds) and pds[-1] - pds[0] + 1 != len(pds):
                    raise RuntimeError("post-decision states are not contiguous per phase")
                row.append((s0, ns, int(pds[0]) if len(pds) else 0, len(pds)))
            self._blocks.append(row)
        sizes = [int(np.prod([b[1] for b in row])) for row in self._blocks]
        total = sum(sizes)
        if total > budget:
            from .model import StateBudgetError
            raise StateBudgetError(total, budget)
        self.n_states = total
        self.state_off = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        pd_sizes = [int(np.prod([b[3] for b in row])) for row in self._blocks]
        self.pd_off = np.concatenate([[0], np.cumsum(pd_sizes)]).astype(np.int64)
        self._build_members()
        self._build_pd()
        self._build_actions()
        v = np.zeros(total)
        block = np.ones(1)
        for u, (s0, ns, _, _) in zip(self.users, self._blocks[0]):
            block = np.kron(block, u.v0[s0:s0 + ns])
        v[:sizes[0]] = block
        self.v0 = v

    @property
    def M(self) -> int:
        return len(self.users)

    def _build_members(self):
        mem = np.empty((self.n_states, self.M), dtype=np.int64)
        phase = np.empty(self.n_states, dtype=np.int64)
        for tau, row in enumerate(self._blocks):
            a, b = self.state_off[tau], self.state_off[tau + 1]
            grids = np.meshgrid(*[np.arange(s0, s0 + ns) for s0, ns, _, _ in row], indexing="ij")
            for i, g in enumerate(grids):
                mem[a:b, i] = g.ravel()
            phase[a:b] = tau
        self.members = mem
        self.state_phase = phase

    def index(self, states: Sequence[int], tau: int = 0) -> int:
        row = self._blocks[tau]
        local = [s - s0 for s, (s0, _, _, _) in zip(states, row)]
        return int(self.state_off[tau] + np.ravel_multi_index(local, [b[1] for b in row]))

    def pd_index(self, pds: Sequence[int], tau: int) -> int:
        row = self._blocks[tau]
        local = [k - k0 for k, (_, _, k0, _) in zip(pds, row)]
        return int(self.pd_off[tau] + np.ravel_multi_index(local, [b[3] for b in row]))

    def _build_pd(self):
        L = self.period
        blocks = []
        for tau, row in enumerate(self._blocks):
            nxt = self._blocks[(tau + 1) % L]
            K = None
            for u, (s0, ns, k0, nk), (n0, nn, _, _) in zip(self.users, row, nxt):
                Pi = u.P_pd[k0:k0 + nk, n0:n0 + nn]
                K = Pi if K is None else sp.kron(K, Pi, format="csr")
            blocks.append((tau, sp.csr_matrix(K)))
        rows, cols, vals = [], [], []
        for tau, K in blocks:
            coo = K.tocoo()
            rows.append(coo.row + self.pd_off[tau])
            cols.append(coo.col + self.state_off[(tau + 1) % L])
            vals.append(coo.data)
        self._finish_pd(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                        int(self.pd_off[-1]))

    def _build_actions(self):
        grid = self.x_grid
        nx = len(grid)
        xtuples = [xt for xt in itertools.product(range(nx), repeat=self.M)
                   if self.relaxed or sum(grid[i] for i in xt) <= 1.0 + GRANT_TOL]
        # per user: (state, x index) -> schedule indices
        seg = []
        for u in self.users:
            d = {}
            st = u.action_state()
            for s in range(u.n_states):
                a, b = u.act_ptr[s], u.act_ptr[s + 1]
                xi = u.act_xi[a:b]
                ks = u.act_sched[a:b]
                for k in range(nx):
                    d[(s, k)] = ks[xi == k]
            seg.append(d)
        counts = np.zeros(self.n_states, dtype=np.int64)
        act_u, act_x, act_pd, act_xt, act_sk = [], [], [], [], []
        for J in range(self.n_states):
            tau = int(self.state_phase[J])
            row = self._blocks[tau]
            members = self.members[J]
            for xt in xtuples:
                lists = [seg[i][(int(members[i]), xt[i])] for i in range(self.M)]
                if any(len(l) == 0 for l in lists):
                    continue
                mesh = np.meshgrid(*lists, indexing="ij")
                flat = [m.ravel() for m in mesh]
                u = np.zeros(len(flat[0]))
                pdl = np.zeros(len(flat[0]), dtype=np.int64)
                for i, (usr, ks) in enumerate(zip(self.users, flat)):
                    u += usr.sched_u[ks]
                    _, _, k0, nk = row[i]
                    pdl = pdl * nk + (usr.sched_pd[ks] - k0)
                act_u.append(u)
                act_pd.append(pdl + self.pd_off[tau])
                act_x.append(np.full(len(u), float(sum(grid[i] for i in xt))))
                act_xt.append(np.tile(np.array(xt, dtype=np.int64), (len(u), 1)))
                act_sk.append(np.stack(flat, axis=1).astype(np.int64))
                counts[J] += len(u)
        self.act_u = np.concatenate(act_u)
        self.act_pd = np.concatenate(act_pd).astype(np.int64)
        self.act_x = np.concatenate(act_x)
        self.act_xt = np.concatenate(act_xt)  # per joint action: grid index of each user's x
        self.act_sk = np.concatenate(act_sk)  # per joint action: each user's schedule index
        self.act_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


def solve_joint(joint: JointModel, alpha: float, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER, lam: float = 0.0) -> Solution:
    """Exact joint value iteration.

    On a stage-constrained model with ``lam=0`` this is the centralised
    optimum; on a relaxed model the reward is sum_i (u_i - lam x_i + lam/M).
    """
    const = lam if joint.relaxed else 0.0
    if not joint.relaxed and lam != 0.0:
        raise ValueError("the stage-constrained joint problem carries no price")
    return value_iteration(joint, lam, const, alpha, tol, max_iter)
