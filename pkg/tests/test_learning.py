import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mumdp import kernels
from mumdp.channel import ChannelSpec
from mumdp.instances import TINY_ALPHA, tiny_a_gop
from mumdp.learning import (
    LearnerTables, LearningConfig, associated_states, associated_update, greedy_schedule, resource_probabilities,
    select_resource, stochastic_price_update, td_update, truncated_consumption,
)
from mumdp.mdp import solve_local
from mumdp.model import LocalModel, UserState
from mumdp.rng import stream
from mumdp.sim import best_utility_tables, run_learner
from mumdp.traffic import TrafficState

ALPHA = TINY_ALPHA


def sidx(model, phase, b, h):
    gop = model.gop
    return model.index(UserState(TrafficState(gop.pattern(phase), b), h))


def test_equal_preferences_are_uniform():
    assert np.allclose(resource_probabilities(np.zeros(3)), 1 / 3)


def test_dominant_preference():
    p = resource_probabilities(np.array([10.0, 0.0, 0.0]))
    assert p[0] == pytest.approx(math.exp(10) / (math.exp(10) + 2))
    assert p[0] > 0.999


def test_softmax_sampling_ratio(inst_a):
    u = inst_a.users[0]
    m = LocalModel(u.gop, u.channel, (0.0, 1.0))
    tb = LearnerTables(m, ALPHA, 10.0)
    tb.rho[0] = (0.0, math.log(2))
    rng = stream(3, "u1", "explore")
    n = 100_000
    hits = sum(select_resource(tb, 0, rng)[0] for _ in range(n))
    p = 2 / 3
    assert abs(hits - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_averaged_mode(model_a):
    tb = LearnerTables(model_a, ALPHA, 10.0)
    xi, x = select_resource(tb, 0, stream(0, "u1", "explore"), averaged=True)
    assert x == pytest.approx(0.5) and xi == 1


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(0.0, 1.0))
def test_exploration_floor(rho, floor):
    p = resource_probabilities(np.array(rho), floor)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= floor / 3 - 1e-15)


def test_greedy_schedule_zero_rate(model_a):
    tb = LearnerTables(model_a, ALPHA, 10.0)
    s = sidx(model_a, 0, (2, 1), 1)
    assert greedy_schedule(tb, s, 0.0) == (0, 0)


def test_greedy_schedule_zero_continuation_is_myopic(model_a):
    tb = LearnerTables(model_a, ALPHA, 10.0)
    best_u, best_k = best_utility_tables(model_a)
    for s in range(model_a.n_states):
        for xi, x in enumerate(model_a.x_grid):
            y = greedy_schedule(tb, s, float(x))
            assert y == model_a.sched_y[best_k[s, xi]]
    # descending q: rate 2 in the good state at x = 0.5 sends DU1 first
    assert greedy_schedule(tb, sidx(model_a, 0, (2, 1), 1), 0.5) == (2, 0)


def test_greedy_schedule_matches_exact_policy(model_a):
    sol = solve_local(model_a, 0.0, ALPHA, tol=1e-11)
    tb = LearnerTables(model_a, ALPHA, 10.0)
    tb.Ut[:] = sol.Ut
    for s in range(model_a.n_states):
        x, y = sol.policy(model_a.state(s))
        assert greedy_schedule(tb, s, x) == y


def test_greedy_schedule_ignores_channel_law_and_sizes():
    gop = tiny_a_gop()
    a = LocalModel(gop, ChannelSpec((0, 1), ((0.6, 0.4), (0.3, 0.7)), (2, 4)), (0.0, 0.5, 1.0))
    b = LocalModel(gop, ChannelSpec((0, 1), ((0.1, 0.9), (0.9, 0.1)), (2, 4)), (0.0, 0.5, 1.0))
    ta, tb = LearnerTables(a, ALPHA, 10.0), LearnerTables(b, ALPHA, 10.0)
    rng = np.random.default_rng(0)
    ta.Ut[:] = tb.Ut[:] = rng.normal(size=a.n_pd)
    for s in range(a.n_states):
        for x in (0.5, 1.0):
            assert greedy_schedule(ta, s, x) == greedy_schedule(tb, s, x)


def test_td_error_example(model_a):
    tb = LearnerTables(model_a, ALPHA, 10.0)
    s, s2 = sidx(model_a, 0, (2, 1), 1), sidx(model_a, 1, (1, 1), 0)
    tb.U[s], tb.U[s2] = 12.0, 10.0
    delta = td_update(tb, s, 1, 0.5, (2, 1), s2, 1.0, LearningConfig())
    assert delta == pytest.approx(3.5)
    assert tb.U[s] == pytest.approx(15.5)  # first visit: mu = 1
    assert tb.rho[s, 1] == pytest.approx(3.5)


def test_unit_step_from_zero(model_a):
    tb = LearnerTables(model_a, ALPHA, 10.0)
    s, s2 = sidx(model_a, 0, (2, 1), 1), sidx(model_a, 1, (1, 1), 0)
    delta = td_update(tb, s, 1, 0.5, (2, 1), s2, 7.0, LearningConfig())
    assert delta == pytest.approx(3.5) and tb.U[s] == pytest.approx(3.5)


def test_zero_td_error_leaves_tables(model_a):
    tb = LearnerTables(model_a, ALPHA, 10.0)
    s, s2 = sidx(model_a, 0, (2, 1), 1), sidx(model_a, 1, (1, 1), 0)
    tb.U[s2] = 0.0
    delta = td_update(tb, s, 0, 0.0, (0, 0), s2, 0.0, LearningConfig())
    assert delta == 0.0
    assert not tb.U.any() and not tb.rho.any() and not tb.Ut.any()


def test_associated_state_count(model_a):
    s = sidx(model_a, 0, (2, 1), 1)
    assert len(associated_states(model_a, s)) == 11
    for cap, expect in ((10**6, 12), (5, 5), (1, 1)):
        tb = LearnerTables(model_a, ALPHA, 10.0)
        cfg = LearningConfig(cap=cap)
        td_update(tb, s, 2, 1.0, (2, 1), sidx(model_a, 1, (0, 1), 0), 0.0, cfg)
        done = associated_update(tb, s, 2, 1.0, 0.0, 0, 0, cfg, np.random.default_rng(1).random(11))
        assert len(done) == expect - 1 and s not in done
        assert np.count_nonzero(tb.n_s) == expect


def test_associated_update_deterministic(model_a):
    s = sidx(model_a, 0, (2, 1), 1)
    runs = []
    for _ in range(2):
        tb = LearnerTables(model_a, ALPHA, 10.0)
        tb.U[:] = np.linspace(0, 3, model_a.n_states)
        associated_update(tb, s, 1, 0.5, 0.3, 1, 1, LearningConfig(cap=4), np.full(11, 0.25))
        runs.append((tb.U.copy(), tb.rho.copy(), tb.Ut.copy()))
    for a, b in zip(*runs):
        assert np.array_equal(a, b)


def test_truncated_consumption_closed_form():
    K, alpha, M = 100, 0.95, 2
    z = truncated_consumption([1 / M] * K, alpha)
    assert z == pytest.approx((1 / M) * (1 - alpha ** K) / (1 - alpha), abs=1e-9)


def test_price_update_examples():
    K, alpha, M, kappa = 100, 0.9, 2, 0.1
    lam = stochastic_price_update(1.0, [[1 / M] * K] * M, kappa, alpha)
    assert lam - 1.0 == pytest.approx(-kappa * alpha ** K / (1 - alpha), abs=1e-12)
    assert stochastic_price_update(2.0, [[0.0] * K] * M, kappa, alpha) == pytest.approx(2.0 - kappa / (1 - alpha))
    assert stochastic_price_update(0.5, [[0.0] * K] * M, kappa, alpha) == 0.0


def test_epoch_kernel_matches_reference():
    K, alpha, kappa0 = 10, 0.9, 0.1
    rng = np.random.default_rng(5)
    req = rng.choice([0.0, 0.5, 1.0], size=(3 * K, 2))
    state, Z = np.array([0.4, 0.0, 1.0]), np.zeros(2)
    lam = 0.4
    for t in range(3 * K):
        kernels.price_epoch_step(t, req[t], Z, state, alpha, K, kappa0, 10.0)
        if t % K == K - 1:
            e = t // K
            lam = stochastic_price_update(lam, req[e * K:(e + 1) * K].T, kappa0 / (1 + e), alpha, 10.0)
            assert state[0] == pytest.approx(lam, abs=1e-12)
            assert state[1] == e + 1
        else:
            assert state[0] == pytest.approx(lam, abs=1e-15)


def test_critic_stays_bounded(models_b):
    cfg = LearningConfig(price_updates=True, K=20, kappa0=1.0, lambda_max=3.0, c_mu=5.0, e_mu=0.5)
    log = run_learner(models_b, ["u1", "u2"], ALPHA, cfg, 5000, 11)
    for tb in log.extra["pool"].tables:
        assert tb.U.min() >= tb.u_lo and tb.U.max() <= tb.u_hi
        assert tb.u_lo == -3.0 / (1 - ALPHA)
    assert 0.0 <= log.lam.min() and log.lam.max() <= 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        LearningConfig(cap=0)
    with pytest.raises(ValueError):
        LearningConfig(floor=1.5)
    assert LearningConfig.from_dict({"lambda": 0.3, "cap": 2}).lam == 0.3
