import numpy as np
import pytest
from hypothesis import given, settings

import numgrad as ng
from numgrad import Tape, TapeError, Tensor, ShapeError
from factories import SEEDS


def grad_of(fn, *tensors):
    with Tape() as tape:
        out = fn()
    ng.backward(tape, out)
    return [t.grad for t in tensors]


def test_elementwise_values():
    assert np.allclose(ng.softmax(np.zeros(3)).data, [1 / 3, 1 / 3, 1 / 3])
    assert ng.sigmoid(0.0).item() == 0.5
    assert ng.tanh(0.0).item() == 0.0


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    (g,) = grad_of(lambda: x * x, x)
    assert g == pytest.approx(6.0)


def test_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    (g,) = grad_of(lambda: ng.sigmoid(x), x)
    assert g == pytest.approx(0.25)


def test_backward_twice_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = ng.sum_(x * x)
    ng.backward(tape, loss)
    with pytest.raises(TapeError):
        ng.backward(tape, loss)


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        ng.backward(tape, y)


def test_shape_errors():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_ndarray_on_the_left_stays_a_tensor():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = np.array([1.0, 2.0, 3.0]) * x
        loss = ng.sum_(y)
    assert isinstance(y, Tensor)
    ng.backward(tape, loss)
    assert np.allclose(x.grad, [1.0, 2.0, 3.0])


def test_masked_softmax():
    logits = Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
    mask = np.array([[False, True, False]])
    with Tape() as tape:
        probs = ng.softmax(logits, axis=1, mask=mask)
        loss = ng.sum_(probs * np.array([[1.0, 5.0, 2.0]]))
    assert probs.data[0, 1] == 0.0
    assert probs.data.sum() == pytest.approx(1.0)
    ng.backward(tape, loss)
    assert logits.grad[0, 1] == 0.0

    with pytest.raises(ValueError):
        ng.softmax(np.ones((1, 2)), axis=1, mask=np.ones((1, 2), dtype=bool))


def test_index_scatters_repeated_rows():
    table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    (g,) = grad_of(lambda: ng.sum_(ng.embedding(table, np.array([0, 2, 0]))), table)
    assert np.array_equal(g, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def _random_network(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 3))
    params = {
        "W1": Tensor(rng.standard_normal((3, 5)), requires_grad=True),
        "b1": Tensor(rng.standard_normal(5), requires_grad=True),
        "W2": Tensor(rng.standard_normal((5, 4)), requires_grad=True),
        "b2": Tensor(rng.standard_normal(4), requires_grad=True),
        "W3": Tensor(rng.standard_normal((4, 2)), requires_grad=True),
        "g": Tensor(rng.uniform(0.5, 1.5, 2), requires_grad=True),
    }

    def loss():
        h = ng.tanh(Tensor(x) @ params["W1"] + params["b1"])
        h = ng.sigmoid(h @ params["W2"] + params["b2"])
        out = h @ params["W3"]
        out = out * params["g"] - ng.mean(out, axis=-1, keepdims=True)
        mixed = ng.softmax(out, axis=0) * ng.exp(out * 0.3) + ng.logsumexp(out, axis=1, keepdims=True)
        return ng.mean(mixed * mixed) + ng.sum_(ng.power(params["g"], 2.0))

    return params, loss


@settings(max_examples=20, deadline=None)
@given(seed=SEEDS)
def test_gradients_match_central_differences(seed):
    params, loss = _random_network(seed)
    with Tape() as tape:
        value = loss()
    ng.backward(tape, value)
    for name, tensor in params.items():
        numeric = ng.numerical_gradient(lambda: loss().item(), tensor, step=1e-5)
        np.testing.assert_allclose(tensor.grad, numeric, rtol=1e-4, atol=1e-6, err_msg=name)


def test_structural_ops_gradients():
    rng = np.random.default_rng(5)
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    weights = rng.standard_normal((3, 4))

    def loss():
        joined = ng.concat([a, b], axis=0)
        stacked = ng.stack([a, b], axis=2).reshape(2, 6)
        picked = joined[np.array([3, 0, 0])]
        return ng.sum_(ng.tanh(picked)) + ng.sum_(stacked * stacked.transpose(1, 0).transpose(1, 0)) \
            + ng.sum_(ng.sigmoid(joined[:, :3] @ weights[:3, :]))

    with Tape() as tape:
        value = loss()
    ng.backward(tape, value)
    for tensor in (a, b):
        numeric = ng.numerical_gradient(lambda: loss().item(), tensor, step=1e-5)
        np.testing.assert_allclose(tensor.grad, numeric, rtol=1e-4, atol=1e-6)


def test_sgd_step():
    p = Tensor(1.0, requires_grad=True)
    p.grad = np.array(2.0)
    ng.SGD([p], learning_rate=0.1).step()
    assert p.item() == pytest.approx(0.8)


def test_zero_gradient_is_a_fixed_point():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = ng.Adam([p], learning_rate=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_descent_on_quadratic_bowl():
    x = Tensor(0.0, requires_grad=True)
    opt = ng.SGD([x], learning_rate=0.1)
    for _ in range(200):
        with Tape() as tape:
            loss = (x - 5.0) * (x - 5.0)
        ng.backward(tape, loss)
        opt.step()
    assert abs(x.item() - 5.0) < 1e-3


def test_adam_state_restores_the_trajectory():
    def run(steps, resume_after=None):
        x = Tensor([3.0, -1.0], requires_grad=True)
        opt = ng.Adam([x], learning_rate=0.05)
        for k in range(steps):
            if resume_after is not None and k == resume_after:
                state = opt.state_dict()
                opt = ng.Adam([x], learning_rate=0.05)
                opt.load_state_dict(state)
            with Tape() as tape:
                loss = ng.sum_(x * x * x * x)
            ng.backward(tape, loss)
            opt.step()
        return x.data

    assert np.array_equal(run(10), run(10, resume_after=4))


def test_relu_routes_gradient_only_above_zero():
    x = Tensor([-1.0, 0.5, 2.0], requires_grad=True)
    (g,) = grad_of(lambda: ng.sum_(ng.relu(x) * 3.0), x)
    assert np.array_equal(g, [0.0, 3.0, 3.0])
