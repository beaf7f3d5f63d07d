import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mumdp.dual import (
    DualEvaluator, PricingConfig, dual_value, grid_minimizer, price_iterate, price_step, scale_allocations,
    subgradient,
)
from mumdp.instances import TINY_ALPHA
from mumdp.mdp import JointModel, discounted_occupancy, solve_joint, solve_local

ALPHA = TINY_ALPHA


@pytest.fixture(scope="module")
def ev_b(models_b):
    return DualEvaluator(models_b, ALPHA)


@pytest.fixture(scope="module")
def joint_opt(models_b):
    return solve_joint(JointModel(models_b), ALPHA, tol=1e-10).initial_value()


def test_zero_price_is_sum_of_single_user_optima(models_b):
    expect = sum(solve_local(m, 0.0, ALPHA, tol=1e-11).initial_value() for m in models_b)
    assert dual_value(models_b, 0.0, ALPHA) == pytest.approx(expect, abs=1e-8)


def test_large_price_idle_limit(models_b):
    lam = 30.0
    assert dual_value(models_b, lam, ALPHA) == pytest.approx(lam / (1 - ALPHA), abs=1e-8)
    assert subgradient(models_b, lam, ALPHA) == pytest.approx(-1 / (1 - ALPHA), abs=1e-9)


def test_dual_matches_relaxed_joint(models_b):
    lam = 0.5
    jr = solve_joint(JointModel(models_b, relaxed=True), ALPHA, tol=1e-11, lam=lam)
    assert dual_value(models_b, lam, ALPHA) == pytest.approx(jr.initial_value(), abs=1e-6)


def test_budget_exact_policy_has_zero_subgradient(models_b):
    Z = []
    for m in models_b:
        sol = solve_local(m, 0.0, ALPHA)
        Z.append(discounted_occupancy(m, sol.pd, np.full(m.n_states, 0.5), ALPHA))
    assert Z[0] == pytest.approx(0.5 / (1 - ALPHA), abs=1e-10)
    assert sum(Z) - 1 / (1 - ALPHA) == pytest.approx(0.0, abs=1e-10)


def test_idle_policy_subgradient(models_b):
    m = models_b[0]
    sol = solve_local(m, 0.0, ALPHA)
    assert discounted_occupancy(m, sol.pd, np.zeros(m.n_states), ALPHA) == 0.0


def test_convexity_inequality_at_half(ev_b):
    pt = ev_b(0.5)
    rng = np.random.default_rng(7)
    for lp in rng.uniform(0, 5, 20):
        assert ev_b(float(lp), with_subgradient=False).value >= pt.value + pt.slope * (lp - 0.5) - 1e-8


def test_slope_sign_convention(ev_b):
    pt = ev_b(0.5)
    assert pt.slope == -pt.subgradient
    # consumption above budget at a low price: the dual still decreases in lambda
    assert pt.subgradient > 0 and ev_b(0.6, with_subgradient=False).value < pt.value


@settings(max_examples=5, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3, unique=True))
def test_dual_is_convex(ev_b, lams):
    l1, l2, l3 = sorted(lams)
    if l3 - l1 < 1e-6:
        return
    u1, u2, u3 = (ev_b(l, with_subgradient=False).value for l in (l1, l2, l3))
    w = (l2 - l1) / (l3 - l1)
    assert u2 <= (1 - w) * u1 + w * u3 + 1e-9


@settings(max_examples=5, deadline=None)
@given(st.floats(0.0, 5.0))
def test_weak_duality(ev_b, joint_opt, lam):
    assert ev_b(lam, with_subgradient=False).value >= joint_opt - 1e-8


def test_price_step_example():
    assert price_step(0.5, -2.0, 0.1) == pytest.approx(0.3)
    assert price_step(0.1, -2.0, 0.1) == 0.0
    assert PricingConfig(beta0=0.1).step(0) == 0.1 and PricingConfig(beta0=0.1).step(3) == 0.025


def test_pricing_config_validation():
    with pytest.raises(ValueError):
        PricingConfig(beta0=0.0)
    with pytest.raises(ValueError):
        PricingConfig(lambda0=-1.0)


def test_no_iterations_gives_single_row(models_b):
    lam, trace = price_iterate(models_b, PricingConfig(lambda0=0.7, max_iters=0), ALPHA)
    assert lam == 0.7 and list(trace.k) == [0] and trace.lam == [0.7]


def test_stationary_at_exact_minimiser(models_b):
    lam_star, _, _ = grid_minimizer(models_b, ALPHA, np.round(np.arange(0, 5.001, 0.01), 2), refine=1e-10)
    lam, trace = price_iterate(models_b, PricingConfig(lambda0=lam_star), ALPHA)
    assert abs(lam - lam_star) <= 1e-6
    assert all(np.isfinite(trace.dual_value)) and list(trace.k) == list(range(len(trace)))


def test_trace_subgradients_valid(models_b, ev_b):
    _, trace = price_iterate(models_b, PricingConfig(max_iters=10), ALPHA)
    probes = [ev_b(l, with_subgradient=False).value for l in (0.0, 1.0, 2.5)]
    for lam, g, val in zip(trace.lam, trace.subgradient, trace.dual_value):
        for lp, up in zip((0.0, 1.0, 2.5), probes):
            assert up >= val - g * (lp - lam) - 1e-8


def test_scale_examples():
    assert np.allclose(scale_allocations([0.8, 0.6]), [0.8 / 1.4, 0.6 / 1.4])
    assert scale_allocations([0.8, 0.6]) == pytest.approx([0.5714, 0.4286], abs=1e-4)
    assert scale_allocations([0.3, 0.4]).tolist() == [0.3, 0.4]
    assert scale_allocations([0.0, 0.0]).tolist() == [0.0, 0.0]
    assert scale_allocations([1.0, 1.0]).tolist() == [0.5, 0.5]
    with pytest.raises(ValueError):
        scale_allocations([-0.1, 0.2])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6))
def test_scale_properties(req):
    out = scale_allocations(req)
    assert out.sum() <= 1.0 + 1e-12
    if sum(req) > 1.0:
        k = int(np.argmax(req))
        assert np.allclose(out * req[k], np.array(req) * out[k], atol=1e-12)
    else:
        assert out.tolist() == list(req)
