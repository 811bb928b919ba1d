import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spsb import graph as g
from spsb.diff import FiniteDifference, ParameterShift, central_difference
from spsb.errors import DataError, InvariantViolation, UsageError
from spsb.qsim import EvalCounter, build_iqp_circuit


def rel_err(a, b):
    """Relative error with a 1e-4 magnitude floor, so exact zeros compare
    against finite-difference roundoff rather than dividing by it."""
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-4))


def grad_of(build, param_values):
    """Analytic gradients of scalar ``build(*tensors)`` w.r.t. each array."""
    ts = [g.Tensor(v, requires_grad=True) for v in param_values]
    with g.Tape() as tape:
        out = build(*ts)
    grads = tape.backward(out)
    return [grads[t] for t in ts]


def fd_grad(build, param_values, which, h=1e-5):
    def f(flat):
        vals = [v.copy() for v in param_values]
        vals[which] = flat.reshape(vals[which].shape)
        return float(build(*[g.Tensor(v) for v in vals]).value)

    return central_difference(f, param_values[which].ravel(), h).reshape(param_values[which].shape)


def test_dense_example():
    W = g.Tensor([[1.0, 2.0]], requires_grad=True)
    with g.Tape() as tape:
        y = g.dense(g.Tensor([3.0, 4.0]), W, g.Tensor([0.0]))
    np.testing.assert_array_equal(y.value, [11.0])
    np.testing.assert_array_equal(tape.backward()[W], [[3.0, 4.0]])


def test_identity_tape_length():
    x = np.array([1.0, -2.0])
    out, tape = g.forward(g.identity, x)
    np.testing.assert_array_equal(out.value, x)
    assert len(tape) == 1


def test_sigmoid_grad_at_zero():
    x = g.Tensor([0.0], requires_grad=True)
    with g.Tape() as tape:
        g.sigmoid(x)
    assert tape.backward()[x][0] == 0.25


def test_loss_examples():
    assert float(g.bce_loss(g.Tensor([0.5]), [1]).value) == pytest.approx(math.log(2), abs=1e-12)
    assert float(g.bce_loss(g.Tensor([1e-9]), [1]).value) == pytest.approx(-math.log(1e-7), rel=1e-12)
    assert float(g.bce_loss(g.Tensor([1e-9]), [1]).value) == pytest.approx(16.118, abs=1e-3)
    np.testing.assert_allclose(g.softmax(g.Tensor([0.0, 0.0])).value, [0.5, 0.5])
    q = g.Tensor([[0.25, 0.75], [0.5, 0.5]])
    ce = float(g.cross_entropy(q, [[0, 1], [1, 0]]).value)
    assert ce == pytest.approx(-(math.log(0.75) + math.log(0.5)) / 2)


def test_loss_label_errors():
    with pytest.raises(DataError):
        g.bce_loss(g.Tensor([0.5]), [2])
    with pytest.raises(DataError):
        g.cross_entropy(g.Tensor([[0.5, 0.5]]), [[1, 1]])


def test_clipped_bce_has_zero_gradient():
    p = g.Tensor([1e-9, 0.3], requires_grad=True)
    with g.Tape() as tape:
        loss = g.bce_loss(p, [1, 1])
    grad = tape.backward(loss)[p]
    assert grad[0] == 0.0
    assert grad[1] == pytest.approx(-1 / 0.3 / 2)


def test_shape_mismatch_names_node():
    with pytest.raises(InvariantViolation, match="dense"):
        g.dense(g.Tensor([1.0, 2.0, 3.0]), g.Tensor([[1.0, 2.0]]), g.Tensor([0.0]))
    with pytest.raises(InvariantViolation, match="add"):
        g.add(g.Tensor([1.0]), g.Tensor([1.0, 2.0]))


def test_backward_twice_is_usage_error():
    W = g.Tensor([[1.0]], requires_grad=True)
    with g.Tape() as tape:
        g.dense(g.Tensor([1.0]), W, g.Tensor([0.0]))
    tape.backward()
    with pytest.raises(UsageError):
        tape.backward()


# --- finite-difference property tests --------------------------------------


def _ops():
    def dense_sigmoid_bce(x, W, b, y):
        return lambda W_, b_: g.bce_loss(g.take(g.sigmoid(g.dense(g.Tensor(x), W_, b_)), 0, axis=-1), y)

    def dense_softmax_ce(x, W, b, y):
        return lambda W_, b_: g.cross_entropy(g.softmax(g.dense(g.Tensor(x), W_, b_)), y)

    def concat_affine(x, W, b, y):
        def f(W_, b_):
            h = g.concat([g.dense(g.Tensor(x), W_, b_), g.affine(g.dense(g.Tensor(x), W_, b_), 2.0, -1.0)])
            return g.total(g.sigmoid(g.reshape(h, (-1,))))

        return f

    return [dense_sigmoid_bce, dense_softmax_ce, concat_affine]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2))
def test_classical_grads_match_fd(seed, which):
    rng = np.random.default_rng(seed)
    bsz, fan_in = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    fan_out = 1 if which == 0 else int(rng.integers(2, 4))
    x = rng.normal(size=(bsz, fan_in))
    W = rng.normal(size=(fan_out, fan_in))
    b = rng.normal(size=fan_out)
    if which == 0:
        y = rng.integers(0, 2, size=bsz)
    else:
        y = np.eye(fan_out)[rng.integers(0, fan_out, size=bsz)]
    build = _ops()[which](x, W, b, y)
    analytic = grad_of(build, [W, b])
    for k, val in enumerate([W, b]):
        assert rel_err(analytic[k], fd_grad(build, [W, b], k)) < 1e-6


def test_chain_rule_associativity(rng):
    x = rng.normal(size=(4, 3))
    W = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    y = np.array([[1, 0], [0, 1], [0, 1], [1, 0]])
    one = grad_of(lambda W_, b_: g.cross_entropy(g.softmax(g.dense(g.Tensor(x), W_, b_)), y), [W, b])
    two = grad_of(
        lambda W_, b_: g.cross_entropy(
            g.softmax(g.dense(g.dense(g.Tensor(x), W_, b_), g.Tensor(np.eye(2)), g.Tensor(np.zeros(2)))), y
        ),
        [W, b],
    )
    for a, c in zip(one, two):
        np.testing.assert_allclose(a, c, atol=1e-12, rtol=0)


# --- quantum nodes ----------------------------------------------------------


def _hybrid_loss(circuit, x, y, diff, counter=None):
    def build(theta, W, b):
        z = g.QuantumNode(circuit, theta, diff, counter)(g.Tensor(x))
        return g.bce_loss(g.take(g.sigmoid(g.dense(z, W, b)), 0, axis=-1), y)

    return build


def test_quantum_node_fd_matches_whole_model_fd(rng):
    c = build_iqp_circuit(3, 2)
    x = rng.uniform(0, math.pi, size=(5, 3))
    y = rng.integers(0, 2, size=5)
    vals = [rng.uniform(-1, 1, 6), rng.normal(size=(1, 3)), rng.normal(size=1)]
    build = _hybrid_loss(c, x, y, FiniteDifference())
    analytic = grad_of(build, vals)
    for k in range(3):
        assert rel_err(analytic[k], fd_grad(build, vals, k)) < 1e-4


def test_param_shift_hybrid_grad_matches_fd(rng):
    c = build_iqp_circuit(2, 2)
    x = rng.uniform(0, math.pi, size=(4, 2))
    y = np.array([0, 1, 1, 0])
    vals = [rng.uniform(-1, 1, 4), rng.normal(size=(1, 2)), rng.normal(size=1)]
    build = _hybrid_loss(c, x, y, ParameterShift())
    analytic = grad_of(build, vals)
    assert rel_err(analytic[0], fd_grad(build, vals, 0)) < 1e-6


def test_gradient_accumulation_over_applications(rng):
    c = build_iqp_circuit(3, 2)
    theta0 = rng.uniform(-1, 1, 6)
    xs = rng.uniform(0, math.pi, size=(4, 3))

    def loss_for(rows):
        theta = g.Tensor(theta0, requires_grad=True)
        node = g.QuantumNode(c, theta, ParameterShift())
        with g.Tape() as tape:
            parts = [g.total(node(g.Tensor(x))) for x in rows]
            out = parts[0]
            for p in parts[1:]:
                out = g.add(out, p)
        return tape.backward(out)[theta]

    summed = loss_for(xs)
    individual = sum(loss_for(xs[i : i + 1]) for i in range(len(xs)))
    np.testing.assert_allclose(summed, individual, atol=1e-10, rtol=0)


def test_model_a_batch_counts_one_eval_per_sample(rng):
    from spsb.diff import SPSB
    from spsb.tasks.models import build_model

    counter = EvalCounter()
    model = build_model("random-a", 5, 3, SPSB(), rng, counter)
    model.forward(g.Tensor(rng.uniform(0, math.pi, size=(25, 5))))
    assert counter.total == 25


def test_features_receive_no_gradient(rng):
    c = build_iqp_circuit(2, 1)
    theta = g.Tensor([0.1, 0.2], requires_grad=True)
    x = g.Tensor([[0.3, 0.4]], requires_grad=True)
    with g.Tape() as tape:
        out = g.total(g.QuantumNode(c, theta, ParameterShift())(x))
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[x], 0.0)
    assert np.any(grads[theta] != 0)


def test_stochastic_node_needs_rng_factory():
    from spsb.diff import SPSB

    c = build_iqp_circuit(2, 1)
    theta = g.Tensor([0.1, 0.2], requires_grad=True)
    with g.Tape() as tape:
        out = g.total(g.QuantumNode(c, theta, SPSB())(g.Tensor([[0.3, 0.4]])))
    with pytest.raises(UsageError):
        tape.backward(out)


def test_quantum_node_param_shape_checked():
    with pytest.raises(InvariantViolation):
        g.QuantumNode(build_iqp_circuit(2, 1), g.Tensor([0.1]), ParameterShift())
