import inspect

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mumdp.channel import ChannelError, ChannelSpec, birth_death, default_channel, rate, sample_path, step_channel
from mumdp.rng import stream


def spec(P, R):
    return ChannelSpec(tuple(range(len(P))), P, R)


def test_rate_examples():
    c = spec([[1.0, 0.0], [0.0, 1.0]], (2, 1))
    assert rate(c, 0, 0.5) == 1
    assert rate(c, 0, 0.0) == 0 and rate(c, 1, 0.0) == 0
    assert rate(c, 1, 1.0) == 1


def test_rate_guard_against_truncation():
    c = spec([[1.0]], (3,))
    assert rate(c, 0, 1 / 3) == 1


def test_rate_rejects_out_of_range():
    c = spec([[1.0]], (2,))
    with pytest.raises(ChannelError):
        rate(c, 0, 1.5)
    with pytest.raises(ChannelError):
        rate(c, 0, -0.1)


@given(st.integers(0, 20), st.lists(st.floats(0, 1), min_size=2, max_size=10))
def test_rate_monotone_in_x(R, xs):
    c = spec([[1.0]], (R,))
    xs = sorted(xs)
    r = [rate(c, 0, x) for x in xs]
    assert r == sorted(r)
    assert all(0 <= v <= R for v in r)


def test_invalid_matrices_rejected():
    with pytest.raises(ChannelError):
        spec([[0.5, 0.6], [0.5, 0.5]], (1, 1))
    with pytest.raises(ChannelError):
        spec([[1.5, -0.5], [0.5, 0.5]], (1, 1))
    with pytest.raises(ChannelError):
        spec([[1.0]], (-1,))


def test_identity_and_point_mass_rows():
    rng = stream(0, "u", "channel")
    c = spec([[1.0, 0.0], [0.0, 1.0]], (1, 1))
    assert all(step_channel(c, h, rng) == h for h in (0, 1) for _ in range(100))
    c = spec([[0.0, 1.0], [0.0, 1.0]], (1, 1))
    assert all(step_channel(c, 0, rng) == 1 for _ in range(100))


def test_empirical_frequencies():
    c = spec([[0.5, 0.5], [0.5, 0.5]], (1, 1))
    path = sample_path(c, 0, 100_001, stream(1, "u", "channel"))
    freq = np.bincount(path[1:], minlength=2) / 100_000
    assert np.abs(freq - 0.5).max() < 0.01


def test_step_channel_takes_no_traffic_inputs():
    assert list(inspect.signature(step_channel).parameters) == ["spec", "h", "rng"]


def test_default_channel():
    c = default_channel()
    assert c.n == 8
    P = c.matrix
    assert np.allclose(P.sum(axis=1), 1.0)
    assert P[0, 0] == pytest.approx(0.8) and P[3, 3] == pytest.approx(0.6)
    assert P[3, 2] == pytest.approx(0.2) and P[3, 4] == pytest.approx(0.2)
    assert birth_death(["a"], [1]).matrix.tolist() == [[1.0]]
