import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasco.tinynn import (EXP, IDENTITY, TANH, AdamState, DenseStack, EmbeddingTable, Layer,
                          TapeError, adam_step)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def reference_forward(stack, x):
    """Straight matrix arithmetic, independent of the tape machinery."""
    for L in stack.layers:
        z = L.W.dot(x) + L.b
        x = {"tanh": np.tanh, "identity": lambda v: v, "exp": np.exp}[L.act](z)
    return x


def loss_of(stack, x, w):
    y, _ = stack.forward(x)
    return float(w @ y)


def fd_grads(stack, x, w, h=1e-5):
    out = []
    for p in stack.params():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss_of(stack, x, w)
            p[i] = old - h
            dn = loss_of(stack, x, w)
            p[i] = old
            g[i] = (up - dn) / (2 * h)
        out.append(g)
    return out


def test_identity_layer():
    L = Layer(np.eye(3), np.array([1.0, 2.0, 3.0]), IDENTITY)
    y, _ = DenseStack([L]).forward(np.array([1.0, 1.0, 1.0]))
    assert np.array_equal(y, [2.0, 3.0, 4.0])


def test_zero_weight_tanh():
    b = np.array([0.3, -2.0])
    y, _ = DenseStack([Layer(np.zeros((2, 4)), b, TANH)]).forward(np.ones(4))
    assert np.array_equal(y, np.tanh(b))


@pytest.mark.parametrize("seed", range(5))
def test_matches_reference(seed):
    rng = np.random.default_rng(seed)
    s = DenseStack.init([5, 7, 3], [TANH, IDENTITY], rng)
    x = rng.normal(size=5)
    assert np.max(np.abs(s.forward(x)[0] - reference_forward(s, x))) < 1e-12


def test_scalar_linear_grad():
    s = DenseStack([Layer(np.array([[2.0]]), np.array([0.5]), IDENTITY)])
    y, tape = s.forward(np.array([3.0]))
    grads, gx = s.backward(tape, np.array([1.5]))
    assert grads[0][0, 0] == 3.0 * 1.5 and grads[1][0] == 1.5 and gx[0] == 2.0 * 1.5


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("acts", [(TANH, TANH), (TANH, EXP), (TANH, IDENTITY, EXP)])
def test_gradients_match_finite_differences(seed, acts):
    rng = np.random.default_rng(seed)
    sizes = [4] + [int(rng.integers(2, 6)) for _ in acts[:-1]] + [2]
    s = DenseStack.init(sizes, list(acts), rng)
    x, w = rng.normal(size=4), rng.normal(size=2)
    _, tape = s.forward(x)
    grads, gx = s.backward(tape, w)
    for a, b in zip(grads, fd_grads(s, x, w)):
        assert rel_err(a, b) < 1e-4
    # input gradient too
    h = 1e-5
    fx = np.array([(loss_of(s, x + h * e, w) - loss_of(s, x - h * e, w)) / (2 * h) for e in np.eye(4)])
    assert rel_err(gx, fx) < 1e-4


def test_exp_head_grad_scales_with_output():
    s = DenseStack([Layer(np.array([[0.7]]), np.array([0.2]), EXP)])
    x = np.array([1.3])
    y, tape = s.forward(x)
    grads, _ = s.backward(tape, np.array([1.0]))
    assert grads[1][0] == pytest.approx(np.exp(0.7 * 1.3 + 0.2))
    assert grads[0][0, 0] == pytest.approx(1.3 * y[0])


def test_exp_clip_blocks_gradient():
    s = DenseStack([Layer(np.array([[100.0]]), np.array([0.0]), EXP)])
    y, tape = s.forward(np.array([1.0]))
    assert np.isfinite(y).all()
    grads, _ = s.backward(tape, np.array([1.0]))
    assert grads[0][0, 0] == 0.0


def test_foreign_tape_rejected():
    rng = np.random.default_rng(0)
    a = DenseStack.init([2, 2], [TANH], rng)
    b = DenseStack.init([2, 2], [TANH], rng)
    _, tape = a.forward(np.ones(2))
    with pytest.raises(TapeError):
        b.backward(tape, np.ones(2))
    with pytest.raises(ValueError):
        a.backward(tape, np.ones(3))


def test_bad_shapes():
    with pytest.raises(ValueError):
        DenseStack([Layer(np.ones((2, 3)), np.ones(2)), Layer(np.ones((1, 3)), np.ones(1))])
    with pytest.raises(ValueError):
        Layer(np.ones((2, 3)), np.ones(2), "relu")


def test_embedding_lookup_and_grad():
    e = EmbeddingTable(np.eye(4))
    assert np.array_equal(e.embed(0), [1, 0, 0, 0])
    g = np.zeros((4, 4))
    e.backward(2, np.ones(4), g)
    e.backward(2, np.ones(4), g)
    assert np.array_equal(g[2], 2 * np.ones(4)) and g.sum() == 8
    with pytest.raises(IndexError):
        e.embed(4)


def test_embedding_grad_finite_difference():
    rng = np.random.default_rng(1)
    e = EmbeddingTable.init(5, 3, rng)
    s = DenseStack.init([3, 2], [TANH], rng)
    w = rng.normal(size=2)

    def f():
        return float(w @ s.forward(e.embed(3))[0])

    _, tape = s.forward(e.embed(3))
    _, gx = s.backward(tape, w)
    g = e.backward(3, gx, np.zeros_like(e.table))
    fd = np.zeros(3)
    for j in range(3):
        e.table[3, j] += 1e-5
        up = f()
        e.table[3, j] -= 2e-5
        dn = f()
        e.table[3, j] += 1e-5
        fd[j] = (up - dn) / 2e-5
    assert rel_err(g[3], fd) < 1e-4


def test_adam_zero_grad():
    p = [np.array([1.0, 2.0])]
    st_ = AdamState()
    adam_step(p, [np.zeros(2)], st_)
    assert np.array_equal(p[0], [1.0, 2.0]) and st_.t == 1


@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3))
def test_adam_first_step(g):
    p = [np.array([0.0])]
    adam_step(p, [np.array([g])], AdamState(lr=1e-3))
    assert p[0][0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-4)


@settings(deadline=None, max_examples=20)
@given(st.floats(-3, 3).filter(lambda x: abs(x) > 0.5))
def test_adam_quadratic(x0):
    p = [np.array([x0])]
    st_ = AdamState(lr=1e-3)
    trace = []
    for _ in range(200):
        adam_step(p, [2 * p[0]], st_)
        trace.append(abs(p[0][0]))
    assert all(b < a for a, b in zip(trace[100:], trace[101:]))
    assert trace[-1] < abs(x0)
