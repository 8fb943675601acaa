import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamflow.core import GaussianMixture, make_rng
from hamflow.errors import DimensionError, IntegrityError, TapeError
from hamflow.net import AdamState, Mlp, Tape, cosine_lr
from hamflow.net import tape as T


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_docstring_example():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    y = 0.5 * T.sqnorm(x)
    (gx,) = tape.grad(y, [x])
    np.testing.assert_array_equal(gx, [1.0, 2.0])


UNARY = {
    "tanh": (T.tanh, np.tanh), "sin": (T.sin, np.sin), "cos": (T.cos, np.cos),
    "exp": (T.exp, np.exp), "square": (T.square, np.square),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    op, ref = UNARY[name]
    x0 = make_rng(0).normal(size=(3, 2))
    w = make_rng(1).normal(size=(3, 2))
    tape = Tape()
    x = tape.leaf(x0)
    (g,) = tape.grad(T.sum_(op(x) * w), [x])
    np.testing.assert_allclose(g, fd_grad(lambda z: (ref(z) * w).sum(), x0), atol=1e-8)


def test_broadcasting_binary_ops():
    rng = make_rng(2)
    a0, b0 = rng.normal(size=(4, 3)), rng.normal(size=(3,)) + 3.0
    w = rng.normal(size=(4, 3))

    def f(a, b):
        return (((a + b) * (a - b) / b) * w).sum()

    tape = Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    ga, gb = tape.grad(T.sum_(((a + b) * (a - b) / b) * w), [a, b])
    np.testing.assert_allclose(ga, fd_grad(lambda z: f(z, b0), a0), atol=1e-7)
    np.testing.assert_allclose(gb, fd_grad(lambda z: f(a0, z), b0), atol=1e-7)


def test_matmul_concat_getitem_dot_mean():
    rng = make_rng(3)
    a0, b0 = rng.normal(size=(5, 3)), rng.normal(size=(3, 2))

    def f(a, b):
        h = np.concatenate([a @ b, a[:, :1]], axis=1)
        return np.mean((h * h).sum(-1)) + (a * a).sum(-1)[2]

    tape = Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    h = T.concat([a @ b, a[:, :1]], axis=1)
    out = T.mean(T.dot(h, h)) + T.dot(a, a)[2]
    assert float(out.value) == pytest.approx(f(a0, b0))
    ga, gb = tape.grad(out, [a, b])
    np.testing.assert_allclose(ga, fd_grad(lambda z: f(z, b0), a0), atol=1e-6)
    np.testing.assert_allclose(gb, fd_grad(lambda z: f(a0, z), b0), atol=1e-6)


def test_gmm_score_op_adjoint():
    m = GaussianMixture(np.array([0.3, 0.7]), np.array([[-1.0, 0.5], [1.0, -0.2]]), np.array([0.6, 1.2]))
    x0 = make_rng(4).normal(size=(6, 2))
    w = make_rng(5).normal(size=(6, 2))
    tape = Tape()
    x = tape.leaf(x0)
    (g,) = tape.grad(T.sum_(T.gmm_score_op(m, x) * w), [x])
    np.testing.assert_allclose(g, fd_grad(lambda z: (m.score(z) * w).sum(), x0), atol=1e-6)


def test_plain_numpy_without_tape():
    out = T.tanh(np.array([0.0, 1.0]))
    assert isinstance(out, np.ndarray)


def test_grad_requires_scalar_and_same_tape():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(TapeError):
        tape.grad(x * 2.0, [x])
    other = Tape()
    y = other.leaf(np.ones(3))
    with pytest.raises(TapeError):
        x + y


def test_unused_input_gets_zero_gradient():
    tape = Tape()
    x, y = tape.leaf(np.ones(2)), tape.leaf(np.ones(2))
    gx, gy = tape.grad(T.sqnorm(x), [x, y])
    np.testing.assert_array_equal(gy, [0.0, 0.0])


def test_stop_gradient():
    tape = Tape()
    x = tape.leaf(np.array([3.0]))
    y = T.sum_(x * T.stop_gradient(x))
    (g,) = tape.grad(y, [x])
    np.testing.assert_array_equal(g, [3.0])


def test_replay_is_bit_exact_and_detects_mutation():
    net = Mlp.create(2, (8,), n_freq=2, seed=0)
    net.weights[-1][:] = make_rng(0).normal(size=net.weights[-1].shape)
    x0 = make_rng(1).normal(size=(4, 2))
    tape = Tape()
    x = tape.leaf(x0)
    out = T.sum_(T.square(net(x, 0.3, params=tape.bind(net))))
    assert tape.replay()
    x0[0, 0] += 1.0
    with pytest.raises(TapeError, match="replay mismatch"):
        tape.replay()
    with pytest.raises(TapeError):
        tape.grad(out, [x])


def test_mlp_gradient_wrt_params_and_inputs():
    net = Mlp.create(2, (6, 5), n_freq=2, seed=1)
    rng = make_rng(2)
    net.weights[-1][:] = rng.normal(size=net.weights[-1].shape)
    x0 = rng.normal(size=(3, 2))
    t0 = rng.uniform(0, 1, size=3)

    tape = Tape()
    params = tape.bind(net)
    x, t = tape.leaf(x0), tape.leaf(t0)
    loss = T.sum_(T.square(net(x, t, params=params)))
    grads = tape.grad(loss, params + [x, t])

    def f_flat(flat):
        c = net.copy()
        c.set_flat(flat)
        return (c(x0, t0) ** 2).sum()

    flat_fd = fd_grad(f_flat, net.get_flat())
    np.testing.assert_allclose(np.concatenate([g.ravel() for g in grads[:-2]]), flat_fd, atol=1e-6)
    np.testing.assert_allclose(grads[-2], fd_grad(lambda z: (net(z, t0) ** 2).sum(), x0), atol=1e-6)
    np.testing.assert_allclose(grads[-1], fd_grad(lambda z: (net(x0, z) ** 2).sum(), t0), atol=1e-6)


def test_jvp_and_divergence():
    net = Mlp.create(3, (7,), n_freq=1, seed=3)
    rng = make_rng(4)
    net.weights[-1][:] = rng.normal(size=net.weights[-1].shape)
    x0 = rng.normal(size=(5, 3))
    dx = rng.normal(size=(5, 3))
    h = 1e-6
    _, jv = net.jvp(x0, 0.2, dx=dx, dt=1.0)
    fd = (net(x0 + h * dx, 0.2 + h) - net(x0 - h * dx, 0.2 - h)) / (2 * h)
    np.testing.assert_allclose(jv, fd, atol=1e-7)
    tr = sum((net(x0 + h * e, 0.2) - net(x0 - h * e, 0.2))[:, j] / (2 * h) for j, e in enumerate(np.eye(3)))
    np.testing.assert_allclose(net.divergence(x0, 0.2), tr, atol=1e-7)


def test_new_network_outputs_zero_and_shape_checks():
    net = Mlp.create(2, (4,), n_freq=3, seed=0)
    assert net.layer_sizes == [2 + 7, 4, 2]
    np.testing.assert_array_equal(net(np.ones((3, 2)), 0.5), 0.0)
    with pytest.raises(DimensionError):
        net(np.ones((3, 3)), 0.5)
    with pytest.raises(DimensionError):
        net(np.ones((3, 2)))
    with pytest.raises(DimensionError):
        Mlp.create(2, (4,))(np.ones((3, 2)), 0.5)


def test_adam_reaches_quadratic_minimum():
    target = np.array([1.0, -2.0, 0.5])
    p = [np.zeros(3)]
    opt = AdamState(p, lr=0.05)
    for _ in range(2000):
        opt.step(p, [2 * (p[0] - target)])
    np.testing.assert_allclose(p[0], target, atol=1e-4)


def test_adam_first_step_is_lr_sized():
    p = [np.zeros(2)]
    AdamState(p, lr=0.1).step(p, [np.array([3.0, -1e-3])])
    np.testing.assert_allclose(p[0], [-0.1, 0.1], rtol=1e-4)


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(DimensionError):
        AdamState(p).step(p, [np.zeros(3)])


def test_cosine_lr_endpoints():
    assert cosine_lr(1.0, 0, 100, floor=0.05) == pytest.approx(1.0)
    assert cosine_lr(1.0, 99, 100, floor=0.05) == pytest.approx(0.05)
    assert cosine_lr(1.0, 49.5, 100) == pytest.approx(0.5)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(0, 3),
       st.integers(0, 2 ** 31))
def test_checkpoint_round_trip(tmp_path_factory, d, hidden, n_freq, seed):
    net = Mlp.create(d, tuple(hidden), n_freq=n_freq, time_scale=0.25, seed=seed)
    net.weights[-1][:] = make_rng(seed).normal(size=net.weights[-1].shape)
    path = tmp_path_factory.mktemp("ck") / "net.json"
    net.save(path, config_hash="abc")
    back = Mlp.load(path)
    x = make_rng(seed + 1).normal(size=(4, d))
    t = 0.7 if n_freq else None
    np.testing.assert_array_equal(back(x, t), net(x, t))
    assert back.get_flat().tobytes() == net.get_flat().tobytes()


def test_checkpoint_integrity(tmp_path):
    net = Mlp.create(1, (3,), seed=0)
    path = tmp_path / "net.json"
    net.save(path)
    data = json.loads(path.read_text())
    data["weights"][0][0] += 1e-9
    path.write_text(json.dumps(data))
    with pytest.raises(IntegrityError):
        Mlp.load(path)
    path.write_text("{not json")
    with pytest.raises(IntegrityError):
        Mlp.load(path)
    with pytest.raises(IntegrityError):
        Mlp.from_dict({"format": "other"})


def test_checkpoint_bytes_deterministic(tmp_path):
    a, b = Mlp.create(2, (5,), n_freq=2, seed=9), Mlp.create(2, (5,), n_freq=2, seed=9)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
