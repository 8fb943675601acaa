import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamflow.core import GaussianMixture, make_rng
from hamflow.dynamics import (LearnedForce, OscillationForce, PhaseState, ScoreForce, ZeroForce, energy,
                              energy_drift, flow_oscillation, flow_reflection, flow_zero, leapfrog, volume_check)
from hamflow.errors import DimensionError, DivergenceError, UnsupportedError
from hamflow.net import Mlp, Tape
from hamflow.net import tape as T

finite = st.floats(-3, 3)


def test_phase_state_shape_check():
    with pytest.raises(DimensionError):
        PhaseState(np.zeros(2), np.zeros(3))


def test_flow_zero_examples():
    s = PhaseState(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    out = flow_zero(s, 3.0)
    np.testing.assert_array_equal(out.x, [3.0, 0.0])
    np.testing.assert_array_equal(out.v, [1.0, 0.0])
    same = flow_zero(s, 0.0)
    np.testing.assert_array_equal(same.x, s.x)
    with pytest.raises(ValueError):
        flow_zero(s, -1.0)


def test_leapfrog_zero_force_matches_free_flight():
    rng = make_rng(0)
    s = PhaseState(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    out = leapfrog(ZeroForce(), s, 0.0, 1.7, 9)
    np.testing.assert_allclose(out.x, flow_zero(s, 1.7).x, atol=1e-14)


def test_quarter_period_of_oscillation():
    alpha = 0.7
    x, v = np.array([1.0, -2.0]), np.array([0.3, 0.5])
    out = flow_oscillation(PhaseState(x, v), math.pi / (2 * alpha), alpha)
    np.testing.assert_allclose(out.x, v / alpha, atol=1e-15)
    np.testing.assert_allclose(out.v, -alpha * x, atol=1e-15)


def test_full_period_is_identity():
    s = PhaseState(np.array([0.4, -1.1]), np.array([2.0, 0.1]))
    out = flow_oscillation(s, 2 * math.pi, 1.0)
    np.testing.assert_allclose(out.x, s.x, atol=1e-12)
    np.testing.assert_allclose(out.v, s.v, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2),
       st.floats(0.1, 3.0), st.floats(0, 20))
def test_oscillation_conserves_energy(x, v, alpha, t):
    f = OscillationForce(alpha)
    s = PhaseState(np.array(x), np.array(v))
    assert energy(f, flow_oscillation(s, t, alpha)) == pytest.approx(energy(f, s), abs=1e-12)


def test_energy_examples():
    assert energy(ZeroForce(), PhaseState(np.array([3.0]), np.array([0.0]))) == 0.0
    assert energy(OscillationForce(1.0), PhaseState(np.array([1.0, 0.0]), np.zeros(2))) == 0.5
    with pytest.raises(UnsupportedError):
        energy(LearnedForce(Mlp.create(1, (2,))), PhaseState(np.zeros(1), np.zeros(1)))


def test_oscillation_alpha_must_be_positive():
    with pytest.raises(ValueError):
        OscillationForce(0.0)
    with pytest.raises(ValueError):
        flow_oscillation(PhaseState(np.zeros(1), np.zeros(1)), 1.0, -1.0)


def test_leapfrog_oscillation_close_to_exact():
    rng = make_rng(1)
    s = PhaseState(rng.normal(size=(20, 2)), rng.normal(size=(20, 2)))
    out = leapfrog(OscillationForce(1.3), s, 0.0, 1.0, 1000)
    ref = flow_oscillation(s, 1.0, 1.3)
    assert np.max(np.abs(out.x - ref.x)) < 1e-5
    assert np.max(np.abs(out.v - ref.v)) < 1e-5


def test_energy_drift_is_second_order(gauss1d, backend):
    f = ScoreForce(gauss1d)
    s = PhaseState(np.array([1.2]), np.array([0.7]))
    d1 = energy_drift(f, s, 1.0, 20)
    d2 = energy_drift(f, s, 1.0, 40)
    assert d1 / d2 == pytest.approx(4.0, rel=0.05)


def test_volume_preservation(gmm1d, backend):
    s = PhaseState(np.array([0.3]), np.array([-0.8]))
    assert volume_check(ZeroForce(), s, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert volume_check(OscillationForce(0.5), s, 2.0, method="analytic") == pytest.approx(1.0, abs=1e-8)
    assert abs(volume_check(ScoreForce(gmm1d), s, 1.0, n_steps=10) - 1) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 12))
def test_volume_preservation_random_2d(seed, n_steps):
    rng = make_rng(seed)
    m = GaussianMixture(np.array([0.5, 0.5]), rng.normal(size=(2, 2)), rng.uniform(0.3, 2.0, size=2))
    s = PhaseState(rng.normal(size=2), rng.normal(size=2))
    assert abs(volume_check(ScoreForce(m), s, 1.0, n_steps=n_steps) - 1) <= 1e-6


def test_volume_check_limits():
    with pytest.raises(UnsupportedError):
        volume_check(ZeroForce(), PhaseState(np.zeros(5), np.zeros(5)), 1.0)
    with pytest.raises(UnsupportedError):
        volume_check(ScoreForce(GaussianMixture(np.ones(1), np.zeros((1, 1)), np.ones(1))),
                     PhaseState(np.zeros(1), np.zeros(1)), 1.0, method="analytic")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 30), st.floats(0.05, 2.0))
def test_time_reversal(seed, n_steps, t):
    rng = make_rng(seed)
    m = GaussianMixture(np.array([0.4, 0.6]), np.array([[-2.0], [2.0]]), np.array([1.0, 0.5]))
    s = PhaseState(rng.normal(size=(8, 1)), rng.normal(size=(8, 1)))
    fwd = leapfrog(ScoreForce(m), s, 0.0, t, n_steps)
    back = leapfrog(ScoreForce(m), PhaseState(fwd.x, -fwd.v), 0.0, t, n_steps)
    np.testing.assert_allclose(back.x, s.x, atol=1e-10)
    np.testing.assert_allclose(-back.v, s.v, atol=1e-10)


def test_negative_step_undoes_forward(gmm1d):
    f = OscillationForce(0.8)
    s = PhaseState(np.array([[0.5]]), np.array([[1.0]]))
    fwd = leapfrog(f, s, 0.0, 1.0, 7)
    back = leapfrog(f, fwd, 1.0, 0.0, 7)
    np.testing.assert_allclose(back.x, s.x, atol=1e-12)


def test_fast_and_generic_score_paths_agree(gmm2d, backend):
    rng = make_rng(2)
    s = PhaseState(rng.normal(size=(10, 2)), rng.normal(size=(10, 2)))
    t1 = rng.uniform(0.1, 1.0, size=10)
    fast = leapfrog(ScoreForce(gmm2d), s, 0.0, t1, 6)
    tape = Tape()
    slow = leapfrog(ScoreForce(gmm2d), s, 0.0, t1, 6, tape=tape)
    np.testing.assert_allclose(fast.x, slow.x.value, atol=1e-13)
    np.testing.assert_allclose(fast.v, slow.v.value, atol=1e-13)


def test_single_point_and_batch_agree(gmm1d):
    single = leapfrog(ScoreForce(gmm1d), PhaseState(np.array([0.2]), np.array([0.1])), 0.0, 0.5, 4)
    batch = leapfrog(ScoreForce(gmm1d), PhaseState(np.array([[0.2]]), np.array([[0.1]])), 0.0, 0.5, 4)
    assert single.x.shape == (1,)
    np.testing.assert_array_equal(single.x, batch.x[0])


def test_divergence_guard_reports_step():
    f = OscillationForce(1e4)
    with pytest.raises(DivergenceError) as info:
        leapfrog(f, PhaseState(np.array([[1.0]]), np.zeros((1, 1))), 0.0, 10.0, 20)
    assert info.value.step is not None
    with pytest.raises(ValueError):
        leapfrog(f, PhaseState(np.zeros(1), np.zeros(1)), 0.0, 1.0, 0)


def test_leapfrog_gradient_through_tape():
    net = Mlp.create(2, (8,), seed=0)
    net.weights[-1][:] = make_rng(3).normal(scale=0.3, size=net.weights[-1].shape)
    rng = make_rng(4)
    x0, v0 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))

    def run(params_flat=None, x=x0):
        c = net.copy()
        if params_flat is not None:
            c.set_flat(params_flat)
        out = leapfrog(LearnedForce(c), PhaseState(x, v0), 0.0, 0.8, 5)
        return (out.x ** 2).sum() + (out.v * out.x).sum()

    tape = Tape()
    params = tape.bind(net)
    x = tape.leaf(x0)
    out = leapfrog(LearnedForce(net), PhaseState(x, v0), 0.0, 0.8, 5, tape=tape)
    loss = T.sum_(T.square(out.x)) + T.sum_(out.v * out.x)
    grads = tape.grad(loss, params + [x])
    h = 1e-6
    flat = net.get_flat()
    probe = make_rng(5).normal(size=flat.size)
    fd = (run(flat + h * probe) - run(flat - h * probe)) / (2 * h)
    an = sum((g.ravel() * p).sum() for g, p in zip(grads[:-1], np.split(probe, np.cumsum([g.size for g in grads[:-1]])[:-1])))
    assert an == pytest.approx(fd, rel=1e-6)
    fdx = (run(x=x0 + h * probe[:6].reshape(3, 2)) - run(x=x0 - h * probe[:6].reshape(3, 2))) / (2 * h)
    assert (grads[-1] * probe[:6].reshape(3, 2)).sum() == pytest.approx(fdx, rel=1e-6)


def test_time_dependent_force_uses_midpoint():
    # F(x, t) = t (time-only force): exact v(1) = 0.5, leapfrog with midpoint kicks is exact for a linear t
    net = Mlp.create(1, (1,), n_freq=1, seed=0)
    calls = []

    class Probe(LearnedForce):
        def __call__(self, x, t=None, tape=None):
            calls.append(np.asarray(t).copy())
            return np.ones_like(x) * np.asarray(t).reshape(-1, 1)

    f = Probe(net, time_dependent=True)
    out = leapfrog(f, PhaseState(np.zeros((1, 1)), np.zeros((1, 1))), 0.0, 1.0, 4)
    assert out.v[0, 0] == pytest.approx(0.5, abs=1e-14)
    np.testing.assert_allclose(sorted(set(float(c) for c in calls)), [0.125, 0.375, 0.625, 0.875])


def test_reflection_examples():
    s = PhaseState(np.array([0.5]), np.array([1.0]))
    out = flow_reflection(s, 1.0, np.array([0.0]), np.array([1.0]))
    assert out.x[0] == pytest.approx(0.5)
    assert out.v[0] == -1.0
    inside = PhaseState(np.array([0.5, 0.5]), np.array([0.1, -0.2]))
    out = flow_reflection(inside, 1.0, np.zeros(2), np.ones(2))
    np.testing.assert_allclose(out.x, flow_zero(inside, 1.0).x)
    with pytest.raises(ValueError):
        flow_reflection(PhaseState(np.array([2.0]), np.array([0.0])), 1.0, np.zeros(1), np.ones(1))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-5, 5), st.floats(0, 10))
def test_reflection_stays_in_box_and_keeps_speed(x, v, t):
    out = flow_reflection(PhaseState(np.array([x]), np.array([v])), t, np.zeros(1), np.ones(1))
    assert 0.0 <= out.x[0] <= 1.0
    assert abs(out.v[0]) == abs(v)
