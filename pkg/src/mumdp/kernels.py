"""Numeric inner loops.

Every function here is plain Python over numpy arrays and scalars; ``njit``
compiles it with numba unless ``MUMDP_DISABLE_NUMBA`` is set.  The Bellman
sweep additionally has a vectorised numpy twin that is used on the fallback
path, since an interpreted loop over all actions would be far too slow.
"""

import math

import numpy as np

from ._backend import USE_NUMBA, njit

# ties in Q-values within this relative gap go to the first (smallest x, lexicographically smallest y) action
TIE_TOL = 1e-9
RATE_EPS = 1e-9


# ---------------------------------------------------------------------------
# exact dynamic programming


@njit
def _bellman_sweep_loops(V, pd_ptr, pd_idx, pd_prob, act_ptr, act_u, act_x, act_pd,
                         lam, const, alpha, tie_tol, Ut, V_out, best_out):
    n_pd = pd_ptr.shape[0] - 1
    for k in range(n_pd):
        acc = 0.0
        for e in range(pd_ptr[k], pd_ptr[k + 1]):
            acc += pd_prob[e] * V[pd_idx[e]]
        Ut[k] = acc
    res = 0.0
    n = act_ptr.shape[0] - 1
    for s in range(n):
        a0 = act_ptr[s]
        a1 = act_ptr[s + 1]
        qmax = -np.inf
        for a in range(a0, a1):
            q = act_u[a] - lam * act_x[a] + const + alpha * Ut[act_pd[a]]
            if q > qmax:
                qmax = q
        thr = qmax - tie_tol * (1.0 + abs(qmax))
        best = a0
        for a in range(a0, a1):
            q = act_u[a] - lam * act_x[a] + const + alpha * Ut[act_pd[a]]
            if q >= thr:
                best = a
                break
        V_out[s] = qmax
        best_out[s] = best
        d = abs(qmax - V[s])
        if d > res:
            res = d
    return res


def _bellman_sweep_numpy(V, pd_ptr, pd_idx, pd_prob, act_ptr, act_u, act_x, act_pd,
                         lam, const, alpha, tie_tol, Ut, V_out, best_out):
    Ut[:] = np.add.reduceat(pd_prob * V[pd_idx], pd_ptr[:-1])
    q = act_u - lam * act_x + const + alpha * Ut[act_pd]
    starts = act_ptr[:-1]
    qmax = np.maximum.reduceat(q, starts)
    counts = np.diff(act_ptr)
    thr = np.repeat(qmax - tie_tol * (1.0 + np.abs(qmax)), counts)
    cand = np.where(q >= thr, np.arange(len(q)), len(q))
    best_out[:] = np.minimum.reduceat(cand, starts)
    res = float(np.max(np.abs(qmax - V))) if len(V) else 0.0
    V_out[:] = qmax
    return res


bellman_sweep = _bellman_sweep_loops if USE_NUMBA else _bellman_sweep_numpy


@njit
def expected_next(V, pd_ptr, pd_idx, pd_prob, out):
    for k in range(pd_ptr.shape[0] - 1):
        acc = 0.0
        for e in range(pd_ptr[k], pd_ptr[k + 1]):
            acc += pd_prob[e] * V[pd_idx[e]]
        out[k] = acc
    return out


# ---------------------------------------------------------------------------
# per-slot primitives shared by the learner, exact agents and baselines


@njit
def tdma_rate(peak, x):
    return int(math.floor(peak * x + RATE_EPS))


@njit
def scale_requests(req, out):
    tot = 0.0
    for i in range(req.shape[0]):
        tot += req[i]
    if tot > 1.0:
        for i in range(req.shape[0]):
            out[i] = req[i] / tot
    else:
        for i in range(req.shape[0]):
            out[i] = req[i]
    return out


@njit
def greedy_sched(s, rate, sched_ptr, sched_u, sched_sum, sched_pd, Ut, alpha, tie_tol):
    """Schedule maximising u + alpha * Ut(post-decision) among those fitting ``rate``."""
    a0 = sched_ptr[s]
    a1 = sched_ptr[s + 1]
    qmax = -np.inf
    for k in range(a0, a1):
        if sched_sum[k] <= rate:
            q = sched_u[k] + alpha * Ut[sched_pd[k]]
            if q > qmax:
                qmax = q
    thr = qmax - tie_tol * (1.0 + abs(qmax))
    for k in range(a0, a1):
        if sched_sum[k] <= rate:
            q = sched_u[k] + alpha * Ut[sched_pd[k]]
            if q >= thr:
                return k
    return a0


@njit
def softmax_probs(rho_row, floor, out):
    m = rho_row[0]
    for k in range(1, rho_row.shape[0]):
        if rho_row[k] > m:
            m = rho_row[k]
    tot = 0.0
    for k in range(rho_row.shape[0]):
        out[k] = math.exp(rho_row[k] - m)
        tot += out[k]
    n = rho_row.shape[0]
    for k in range(n):
        out[k] = (1.0 - floor) * out[k] / tot + floor / n
    return out


@njit
def sample_index(probs, u):
    acc = 0.0
    for k in range(probs.shape[0]):
        acc += probs[k]
        if u < acc:
            return k
    return probs.shape[0] - 1


@njit
def nearest_index(grid, x):
    best = 0
    bd = abs(grid[0] - x)
    for k in range(1, grid.shape[0]):
        d = abs(grid[k] - x)
        if d < bd:
            bd = d
            best = k
    return best


@njit
def td_update(s, xi, xhat, u, pd, s_next, lam, alpha, U, rho, Ut, n_s, n_sx, n_pd,
              c_mu, e_mu, c_nu, e_nu, c_phi, e_phi, u_lo, u_hi):
    """One critic/actor/post-decision update; returns the TD error."""
    u_next = U[s_next]
    delta = u - lam * xhat + alpha * u_next - U[s]
    n_s[s] += 1
    n_sx[s, xi] += 1
    n_pd[pd] += 1
    mu = c_mu / n_s[s] ** e_mu
    nu = c_nu / n_sx[s, xi] ** e_nu
    phi = c_phi / n_pd[pd] ** e_phi
    if delta != 0.0:
        val = U[s] + mu * delta
        if val < u_lo:
            val = u_lo
        elif val > u_hi:
            val = u_hi
        U[s] = val
        rho[s, xi] += nu * delta
    Ut[pd] = (1.0 - phi) * Ut[pd] + phi * u_next
    return delta


# ---------------------------------------------------------------------------
# learner episode loop


@njit
def price_epoch_step(t, req, Z, lam_state, alpha, K, kappa0, lam_max):
    """Accumulate alpha^(t mod K) * requests; at the epoch end take a projected stochastic subgradient step."""
    if t % K == 0:
        lam_state[2] = 1.0
    w = lam_state[2]
    for i in range(req.shape[0]):
        Z[i] += w * req[i]
    lam_state[2] = w * alpha
    if t % K == K - 1:
        g = 0.0
        for i in range(req.shape[0]):
            g += Z[i]
            Z[i] = 0.0
        g -= 1.0 / (1.0 - alpha)
        kappa = kappa0 / (1.0 + lam_state[1])
        val = lam_state[0] + kappa * g
        if val < 0.0:
            val = 0.0
        elif val > lam_max:
            val = lam_max
        lam_state[0] = val
        lam_state[1] += 1.0


@njit
def learner_chunk(t0, n_slots, cur, lam_state, Z, x_grid,
                  user_h_base, peak_rates, state_h, block_start, block_len,
                  sched_ptr, sched_u, sched_sum, sched_pd,
                  pd_lookup_base, next_lookup, user_nh,
                  U, rho, Ut, n_s, n_sx, n_pd,
                  u_explore, combo, h_next, assoc_u,
                  alpha, tie_tol, floor, averaged, cap, price_mode, K, kappa0, lam_max,
                  c_mu, e_mu, c_nu, e_nu, c_phi, e_phi, u_lo, u_hi,
                  out_state, out_req, out_grant, out_sched, out_util, out_lam, out_delta):
    """Run ``n_slots`` slots of the multi-user online learning loop in place.

    ``lam_state`` holds ``[lambda, epoch index, discount weight]``; ``Z`` the
    per-user discounted resource sums of the current epoch.  Per-slot randomness is supplied by the
    caller so both backends consume identical streams.
    """
    M = cur.shape[0]
    nx = x_grid.shape[0]
    probs = np.empty(nx)
    req = np.empty(M)
    grant = np.empty(M)
    req_xi = np.empty(M, dtype=np.int64)
    max_block = 0
    for s in range(block_len.shape[0]):
        if block_len[s] > max_block:
            max_block = block_len[s]
    scratch = np.empty(max(max_block, 1), dtype=np.int64)
    for j in range(n_slots):
        t = t0 + j
        lam = lam_state[0]
        for i in range(M):
            s = cur[i]
            softmax_probs(rho[s], floor, probs)
            if averaged:
                xr = 0.0
                for k in range(nx):
                    xr += probs[k] * x_grid[k]
                req[i] = xr
                req_xi[i] = nearest_index(x_grid, xr)
            else:
                k = sample_index(probs, u_explore[i, j])
                req[i] = x_grid[k]
                req_xi[i] = k
        scale_requests(req, grant)
        for i in range(M):
            s = cur[i]
            hb = user_h_base[i]
            nh = user_nh[i]
            h = state_h[s]
            r = tdma_rate(peak_rates[hb + h], grant[i])
            k = greedy_sched(s, r, sched_ptr, sched_u, sched_sum, sched_pd, Ut, alpha, tie_tol)
            pd = sched_pd[k]
            s_next = next_lookup[pd_lookup_base[pd] + combo[i, j] * nh + h_next[i, j]]
            delta = td_update(s, req_xi[i], grant[i], sched_u[k], pd, s_next, lam, alpha,
                              U, rho, Ut, n_s, n_sx, n_pd,
                              c_mu, e_mu, c_nu, e_nu, c_phi, e_phi, u_lo[i], u_hi[i])
            # virtual transmissions in associated states (same phase and channel)
            if cap > 1:
                bs = block_start[s]
                bl = block_len[s]
                m = 0
                for a in range(bs, bs + bl):
                    if a != s:
                        scratch[m] = a
                        m += 1
                take = m
                if cap - 1 < m:
                    take = cap - 1
                    for q in range(take):
                        w = q + int(assoc_u[i, j, q] * (m - q))
                        if w >= m:
                            w = m - 1
                        tmp = scratch[q]
                        scratch[q] = scratch[w]
                        scratch[w] = tmp
                for q in range(take):
                    sa = scratch[q]
                    ka = greedy_sched(sa, r, sched_ptr, sched_u, sched_sum, sched_pd, Ut, alpha, tie_tol)
                    pda = sched_pd[ka]
                    sa_next = next_lookup[pd_lookup_base[pda] + combo[i, j] * nh + h_next[i, j]]
                    td_update(sa, req_xi[i], grant[i], sched_u[ka], pda, sa_next, lam, alpha,
                              U, rho, Ut, n_s, n_sx, n_pd,
                              c_mu, e_mu, c_nu, e_nu, c_phi, e_phi, u_lo[i], u_hi[i])
            out_state[i, j] = s
            out_req[i, j] = req[i]
            out_grant[i, j] = grant[i]
            out_sched[i, j] = k
            out_util[i, j] = sched_u[k]
            out_lam[i, j] = lam
            out_delta[i, j] = delta
            cur[i] = s_next
        if price_mode == 1:
            price_epoch_step(t, req, Z, lam_state, alpha, K, kappa0, lam_max)
    return 0


# ---------------------------------------------------------------------------
# exogenous sample paths


@njit
def markov_path(cdf, h0, u, out):
    """out[k] = state after k+1 steps from h0, driven by uniforms ``u``."""
    h = h0
    n = cdf.shape[1]
    for k in range(u.shape[0]):
        row = cdf[h]
        nxt = n - 1
        for c in range(n):
            if u[k] < row[c]:
                nxt = c
                break
        out[k] = nxt
        h = nxt
    return out


@njit
def draw_index(cdf, u):
    for c in range(cdf.shape[0]):
        if u < cdf[c]:
            return c
    return cdf.shape[0] - 1
