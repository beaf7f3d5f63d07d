import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mumdp.instances import TINY_ALPHA
from mumdp.learning import LearningConfig
from mumdp.mdp import JointModel, evaluate_policy, solve_joint, solve_local
from mumdp.model import UserState
from mumdp.sim import (
    Agent, AgentError, ExactAgent, MyopicAgent, MyopicDualAgent, PriorityAgent, StandardLearnerAgent,
    best_utility_tables, fixed_allocation_values, priority_schedule, run_episode, run_learner,
)
from mumdp.traffic import DuSpec, GopSpec, TrafficState

ALPHA = TINY_ALPHA
NAMES = ["u1", "u2"]


def sidx(model, phase, b, h):
    return model.index(UserState(TrafficState(model.gop.pattern(phase), b), h))


def logs_equal(a, b):
    return all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("state", "req", "grant", "sched", "util", "lam"))


def test_exact_policy_simulation_matches_evaluation(model_a):
    sol = solve_local(model_a, 0.0, ALPHA, tol=1e-10)
    exact = evaluate_policy(model_a, sol, ALPHA).value
    vals = [run_episode([model_a], ["u1"], ALPHA, ExactAgent([sol]), 10_000, seed).total_discounted()
            for seed in range(50)]
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - exact) <= 3 * se


def test_symmetric_full_requests_split_evenly(models_b):
    log = run_episode(models_b, NAMES, ALPHA, PriorityAgent([1.0, 1.0]), 200, 0)
    assert np.all(log.grant == 0.5)
    assert log.violations() == 0


def test_empty_horizon(models_b):
    log = run_episode(models_b, NAMES, ALPHA, MyopicAgent(), 0, 0)
    assert log.horizon == 0 and log.total_discounted() == 0.0
    assert run_learner(models_b, NAMES, ALPHA, LearningConfig(), 0, 0).horizon == 0


def test_single_user_myopic_is_per_slot_greedy(model_a):
    log = run_episode([model_a], ["u1"], ALPHA, MyopicAgent(), 500, 3)
    best_u, best_k = best_utility_tables(model_a)
    for t in range(log.horizon):
        s = log.state[0, t]
        xi = int(np.argmax(best_u[s]))
        assert log.req[0, t] == model_a.x_grid[xi]
        assert log.util[0, t] == best_u[s, xi]


def test_myopic_requests_nothing_without_packets(models_b):
    agent = MyopicAgent()
    agent.start(models_b, ALPHA)
    empty = [sidx(m, 0, (0, 0), 1) for m in models_b]
    assert agent.requests(0, np.array(empty), np.zeros(2)).tolist() == [0.0, 0.0]


def test_myopic_not_better_than_joint_optimum(models_b):
    joint_opt = solve_joint(JointModel(models_b), ALPHA, tol=1e-10).initial_value()
    vals = [run_episode(models_b, NAMES, ALPHA, MyopicAgent(), 300, seed).total_discounted() for seed in range(50)]
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert np.mean(vals) <= joint_opt + 3 * se


def test_priority_order(model_a):
    s = sidx(model_a, 0, (1, 1), 1)
    assert priority_schedule(model_a, s, 1) == (1, 0)
    assert priority_schedule(model_a, s, 4) == (1, 1)
    # the child of a useless DU is skipped
    assert priority_schedule(model_a, sidx(model_a, 0, (-1, 1), 1), 4) == (0, 0)


def test_priority_equal_q_uses_canonical_order(inst_a):
    from mumdp.model import LocalModel
    gop = GopSpec(2, (DuSpec(1, 2.0, 0, ((1, 1.0),), 1), DuSpec(2, 2.0, 1, ((1, 1.0),), 1, {1})), 2)
    m = LocalModel(gop, inst_a.users[0].channel, inst_a.x_grid)
    assert priority_schedule(m, sidx(m, 0, (1, 1), 1), 1) == (1, 0)
    assert priority_schedule(m, sidx(m, 1, (1, 1), 1), 1) == (1, 0)


def test_priority_never_beats_foresighted(model_a):
    for k in range(1, 11):
        fore, prio = fixed_allocation_values(model_a, k / 10, ALPHA)
        assert prio <= fore + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2), st.integers(0, 1000))
def test_grants_never_exceed_budget(models_b, fixed, seed):
    log = run_episode(models_b, NAMES, ALPHA, PriorityAgent(fixed), 50, seed, check_grid=False)
    assert np.all(log.grant.sum(axis=0) <= 1.0 + 1e-12)
    assert log.violations() == 0


@pytest.mark.parametrize("make", [MyopicAgent, lambda: PriorityAgent([0.5, 0.5]), MyopicDualAgent])
def test_determinism(models_b, make):
    a = run_episode(models_b, NAMES, ALPHA, make(), 300, 9)
    b = run_episode(models_b, NAMES, ALPHA, make(), 300, 9)
    assert logs_equal(a, b)


def test_learner_determinism_and_chunking(models_b):
    cfg = LearningConfig(price_updates=True, K=50)
    a = run_learner(models_b, NAMES, ALPHA, cfg, 3000, 4)
    b = run_learner(models_b, NAMES, ALPHA, LearningConfig(price_updates=True, K=50, chunk=700), 3000, 4)
    assert logs_equal(a, b)


def test_price_changes_only_at_epoch_boundaries(models_b):
    K = 50
    log = run_learner(models_b, NAMES, ALPHA, LearningConfig(price_updates=True, K=K, lam=0.5), 2000, 2)
    changes = np.nonzero(np.diff(log.lam[0]))[0] + 1
    assert len(changes) > 0
    assert np.all(changes % K == 0)


def test_user_swap_keeps_channel_paths(models_b):
    a = run_episode(models_b, NAMES, ALPHA, PriorityAgent([0.5, 0.5]), 500, 21)
    b = run_episode(models_b[::-1], NAMES[::-1], ALPHA, PriorityAgent([0.5, 0.5]), 500, 21)
    for i, j in ((0, 1), (1, 0)):
        m = models_b[i]
        assert np.array_equal(m.state_h[a.state[i]], m.state_h[b.state[j]])


def test_off_grid_request_is_an_error(models_b):
    class Bad(Agent):
        def requests(self, t, cur, u_explore):
            return np.array([0.3, 0.3])

        def schedule(self, t, i, s, xhat, rate):
            return int(self.models[i].sched_ptr[s])

    with pytest.raises(AgentError, match="outside the grid"):
        run_episode(models_b, NAMES, ALPHA, Bad(), 5, 0)


def test_cap_one_equals_standard_learner(models_b):
    cfg = LearningConfig(cap=1, price_updates=True, K=40)
    a = run_learner(models_b, NAMES, ALPHA, cfg, 4000, 8)
    agent = StandardLearnerAgent(cfg)
    b = run_episode(models_b, NAMES, ALPHA, agent, 4000, 8)
    assert logs_equal(a, b)
    for ta, tb in zip(a.extra["pool"].tables, agent.tables):
        for f in ("U", "rho", "Ut", "n_s", "n_sx", "n_pd"):
            assert np.array_equal(getattr(ta, f), getattr(tb, f))


def test_myopic_dual_logs_iterations(models_b):
    agent = MyopicDualAgent()
    log = run_episode(models_b, NAMES, ALPHA, agent, 100, 0)
    assert len(agent.iterations) == 100 and len(agent.prices) == 100
    assert all(1 <= k <= agent.max_iters for k in agent.iterations)
    assert log.violations() == 0
