import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mumdp import kernels
from mumdp.channel import ChannelSpec, rate
from mumdp.instances import TINY_ALPHA, twin_a
from mumdp.mdp import (
    JointModel, PolicySpec, SolverError, evaluate_policy, solve_joint, solve_local, value_iteration,
)
from mumdp.model import LocalModel, StateBudgetError, enumerate_states, state_count
from mumdp.oracles import finite_horizon_joint, finite_horizon_local
from mumdp.sim import best_utility_tables
from mumdp.traffic import DuSpec, GopSpec, feasible_schedules

ALPHA = TINY_ALPHA


def test_state_counts(inst_a, model_a):
    u = inst_a.users[0]
    assert len(enumerate_states(u.gop, u.channel, 0)) == 24
    assert len(enumerate_states(u.gop, u.channel, 1)) == 24
    assert model_a.n_states == state_count(u.gop, u.channel) == 48
    gop = GopSpec(1, (DuSpec(1, 1.0, 0, ((1, 1.0),), 1),), 1)
    assert len(enumerate_states(gop, ChannelSpec((0,), ((1.0,),), (1,)), 0)) == 3


def test_budget_error_reports_count(inst_a):
    u = inst_a.users[0]
    with pytest.raises(StateBudgetError, match="48"):
        LocalModel(u.gop, u.channel, inst_a.x_grid, budget=10)
    with pytest.raises(StateBudgetError):
        enumerate_states(u.gop, u.channel, 0, budget=10)


def test_enumeration_is_deterministic(inst_a):
    u = inst_a.users[0]
    assert enumerate_states(u.gop, u.channel, 1) == enumerate_states(u.gop, u.channel, 1)


def test_large_price_idles(model_a):
    lam = 30.0  # above max R * max q / min positive x = 4 * 3 / 0.5
    sol = solve_local(model_a, lam, ALPHA, M=2, tol=1e-10)
    assert np.all(sol.x == 0.0)
    assert np.allclose(sol.values, lam / 2 / (1 - ALPHA), atol=1e-8)


def test_zero_discount_is_myopic(model_a):
    lam = 0.7
    sol = solve_local(model_a, lam, 0.0, M=2)
    best_u, _ = best_utility_tables(model_a)
    assert np.allclose(sol.values, (best_u - lam * model_a.x_grid).max(axis=1) + lam / 2, atol=1e-12)


def test_constant_only_for_multiuser(model_a):
    a = solve_local(model_a, 0.5, ALPHA, M=1, tol=1e-10)
    b = solve_local(model_a, 0.5, ALPHA, M=2, tol=1e-10)
    assert np.array_equal(a.best, b.best)
    assert np.allclose(b.values - a.values, 0.25 / (1 - ALPHA), atol=1e-8)


def test_matches_finite_horizon_oracle(inst_a, model_a):
    lam, H = 0.5, 30
    u = inst_a.users[0]
    sol = solve_local(model_a, lam, ALPHA, tol=1e-10)
    ref = finite_horizon_local(u.gop, u.channel, inst_a.x_grid, lam, ALPHA, H)
    bound = ALPHA ** H * model_a.u_max / (1 - ALPHA)
    assert max(abs(sol.value(s) - v) for s, v in ref.items()) <= bound


def test_policy_is_feasible(inst_a, model_a):
    ch = inst_a.users[0].channel
    sol = solve_local(model_a, 0.3, ALPHA)
    for s in range(model_a.n_states):
        st_ = model_a.state(s)
        x, y = sol.policy(st_)
        assert x in inst_a.x_grid
        assert y in feasible_schedules(st_.traffic, rate(ch, st_.channel, x))


def test_bellman_residual_and_contraction(model_a):
    track = []
    sol = value_iteration(model_a, 0.5, 0.0, ALPHA, tol=1e-9, track=track)
    V = sol.values.copy()
    out, best, Ut = np.empty_like(V), np.empty(len(V), dtype=np.int64), np.empty(model_a.n_pd)
    m = model_a
    res = kernels.bellman_sweep(V, m.pd_ptr, m.pd_idx, m.pd_prob, m.act_ptr, m.act_u, m.act_x, m.act_pd,
                                0.5, 0.0, ALPHA, kernels.TIE_TOL, Ut, out, best)
    assert res <= 1e-9
    r = np.array(track)
    assert np.all(r[1:] <= ALPHA * r[:-1] + 1e-12)


def test_deterministic_ties(model_a):
    a = solve_local(model_a, 0.5, ALPHA)
    b = solve_local(model_a, 0.5, ALPHA)
    assert np.array_equal(a.best, b.best) and np.array_equal(a.values, b.values)


def test_nonconvergence_carries_residual(model_a):
    with pytest.raises(SolverError) as exc:
        solve_local(model_a, 0.0, ALPHA, tol=1e-12, max_iter=3)
    assert exc.value.residual > 1e-12


def test_rejects_bad_arguments(model_a):
    with pytest.raises(ValueError):
        solve_local(model_a, -1.0, ALPHA)
    with pytest.raises(ValueError):
        solve_local(model_a, 0.0, 1.0)


# -- joint ---------------------------------------------------------------------

def test_joint_single_user_reduces_to_local(model_a):
    js = solve_joint(JointModel([model_a]), ALPHA, tol=1e-10)
    ls = solve_local(model_a, 0.0, ALPHA, tol=1e-10)
    assert np.allclose(js.values, ls.values, atol=1e-9)


def test_joint_matches_finite_horizon(inst_b, models_b):
    H = 8
    joint = JointModel(models_b)
    js = solve_joint(joint, ALPHA, tol=1e-10)
    ref = finite_horizon_joint([(u.gop, u.channel) for u in inst_b.users], inst_b.x_grid, ALPHA, H)
    bound = ALPHA ** H * sum(m.u_max for m in models_b) / (1 - ALPHA)
    vals = np.array([ref[tuple(m.state(int(s)) for m, s in zip(models_b, joint.members[J]))]
                     for J in range(joint.n_states)])
    assert np.max(np.abs(js.values - vals)) <= bound
    assert abs(js.initial_value() - joint.v0 @ vals) <= bound


def test_joint_symmetric_under_swap():
    models = twin_a().models()
    joint = JointModel(models)
    js = solve_joint(joint, ALPHA, tol=1e-10)
    for J in range(joint.n_states):
        a, b = joint.members[J]
        K = joint.index([b, a], int(joint.state_phase[J]))
        assert js.values[J] == pytest.approx(js.values[K], abs=1e-9)


def test_stage_constrained_joint_takes_no_price(models_b):
    with pytest.raises(ValueError):
        solve_joint(JointModel(models_b), ALPHA, lam=0.5)


def test_joint_actions_respect_budget(models_b):
    joint = JointModel(models_b)
    assert np.all(joint.act_x <= 1.0 + 1e-12)


@settings(max_examples=4, deadline=None)
@given(st.floats(0.0, 4.0))
def test_decomposition_any_price(models_b, lam):
    relaxed = JointModel(models_b, relaxed=True)
    jr = solve_joint(relaxed, ALPHA, tol=1e-10, lam=lam)
    total = sum(solve_local(m, lam, ALPHA, M=2, tol=1e-10).values[relaxed.members[:, i]]
                for i, m in enumerate(models_b))
    assert np.max(np.abs(jr.values - total)) <= 1e-6


# -- evaluation ------------------------------------------------------------------

def test_zero_policy_has_zero_value(model_a):
    idle = np.array([model_a.sched_index(s, (0,) * len(model_a.buffers_of(s))) for s in range(model_a.n_states)])
    pol = PolicySpec(np.zeros(model_a.n_states), model_a.sched_pd[idle])
    assert evaluate_policy(model_a, pol, ALPHA).value == 0.0


def test_evaluation_matches_fixed_point(model_a):
    sol = solve_local(model_a, 0.0, ALPHA, tol=1e-11)
    ev = evaluate_policy(model_a, sol, ALPHA)
    assert np.allclose(ev.values, sol.values, atol=1e-9)


def test_myopic_policy_not_better_than_foresighted(model_a):
    best_u, best_k = best_utility_tables(model_a)
    xi = best_u.argmax(axis=1)
    k = best_k[np.arange(model_a.n_states), xi]
    myopic = evaluate_policy(model_a, PolicySpec(model_a.sched_u[k], model_a.sched_pd[k]), ALPHA).value
    fore = evaluate_policy(model_a, solve_local(model_a, 0.0, ALPHA, tol=1e-10), ALPHA).value
    assert myopic <= fore + 1e-9
