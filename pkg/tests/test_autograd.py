import math

import numpy as np
import pytest

from degta import autograd as ag
from degta.autograd import NumericError, ShapeError, Tape, Tensor, grad_check
from degta.checks import model_cases, primitive_cases


def fd_oracle(f, x, eps=1e-6):
    """Plain central differences on a numpy array, independent of grad_check."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + eps
        up = f()
        x[i] = orig - eps
        down = f()
        x[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad


def backprop(build, *params):
    with Tape() as tape:
        out = build()
        tape.backward(out)
    return [p.grad for p in params]


# -- worked examples -----------------------------------------------------------

def test_row_softmax_uniform():
    np.testing.assert_array_equal(ag.row_softmax(Tensor([[0.0, 0, 0, 0]])).values, [[0.25] * 4])


def test_leaky_relu_value():
    assert ag.leaky_relu(Tensor([[-1.0]]), 0.2).values[0, 0] == -0.2


def test_quadratic_gradient():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    (g,) = backprop(lambda: ag.sum(x * x), x)
    np.testing.assert_array_equal(g, [[2.0, 4.0]])


def test_grad_check_square():
    x = Tensor([[3.0]], requires_grad=True)
    with Tape() as tape:
        y = x * x
        tape.backward(y)
    assert x.grad[0, 0] == pytest.approx(6.0, abs=1e-12)
    assert grad_check(lambda: x * x, [x]) < 1e-9


def test_cross_entropy_symmetric():
    logits = Tensor([[0.0, 0.0]], requires_grad=True)
    with Tape() as tape:
        loss = ag.cross_entropy(logits, [0])
        tape.backward(loss)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_allclose(logits.grad, [[-0.5, 0.5]], atol=1e-15)


def test_threshold_forward_and_passthrough():
    m = Tensor([[0.6, 0.3, 0.1]], requires_grad=True)
    upstream = np.array([[0.7, -1.3, 2.0]])
    with Tape() as tape:
        out = ag.straight_through_threshold(m, 0.5)
        tape.backward(ag.sum(ag.mul(out, Tensor(upstream))))
    np.testing.assert_array_equal(out.values, [[1, 0, 0]])
    np.testing.assert_array_equal(m.grad, upstream)
    np.testing.assert_array_equal(ag.straight_through_threshold(m, -np.inf).values, [[1, 1, 1]])


def test_topk_indicator_examples():
    np.testing.assert_array_equal(ag.topk_indicator(np.array([[0.5, 0.3, 0.2]]), 2), [[1, 1, 0]])
    # ties go to the lower column
    np.testing.assert_array_equal(ag.topk_indicator(np.array([[0.2, 0.4, 0.4, 0.4]]), 2), [[0, 1, 1, 0]])
    cand = np.array([[True, False, True]])
    np.testing.assert_array_equal(ag.topk_indicator(np.array([[0.1, 0.9, 0.2]]), 5, cand), [[1, 0, 1]])


def test_surrogate_swaps_forward_only():
    m = Tensor([[0.6, 0.3]])
    assert ag.straight_through_threshold(m, 0.5).values.tolist() == [[1, 0]]
    with ag.surrogate_sampling():
        assert ag.straight_through_threshold(m, 0.5).values.tolist() == [[0.6, 0.3]]
    assert not ag.surrogate_enabled()


# -- invariants ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_primitives_pass_grad_check(seed):
    for name, f, params in primitive_cases(np.random.default_rng(seed)):
        assert grad_check(f, params) < 1e-6, name


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_agrees_with_independent_fd(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 5)))

    def f():
        return ag.sum(ag.mul(ag.row_softmax(ag.leaky_relu(a @ b)), w))

    ga, gb = backprop(f, a, b)
    with ag.no_tape():
        np.testing.assert_allclose(ga, fd_oracle(lambda: f().item(), a.values), atol=1e-8)
        np.testing.assert_allclose(gb, fd_oracle(lambda: f().item(), b.values), atol=1e-8)


def test_matmul_closed_form():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    seed = rng.standard_normal((3, 2))
    with Tape() as tape:
        out = a @ b
        tape.backward(out, seed)
    np.testing.assert_allclose(a.grad, seed @ b.values.T, atol=1e-14)
    np.testing.assert_allclose(b.grad, a.values.T @ seed, atol=1e-14)


def test_stop_gradient_blocks():
    x = Tensor([[1.5, -2.0]], requires_grad=True)
    (g,) = backprop(lambda: ag.sum(x * ag.stop_gradient(x)) + ag.sum(ag.stop_gradient(x)), x)
    np.testing.assert_array_equal(g, [[1.5, -2.0]])


@pytest.mark.parametrize("seed", range(5))
def test_softmax_rows_sum_to_one(seed):
    x = Tensor(np.random.default_rng(seed).standard_normal((6, 9)) * 30)
    y = ag.row_softmax(x).values
    assert y.min() >= 0
    np.testing.assert_allclose(y.sum(axis=1), 1, atol=1e-12)


def test_masked_softmax_zeros_and_empty_rows():
    x = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    mask = np.array([[True, False, True], [False, False, False]])
    with pytest.raises(NumericError):
        ag.masked_row_softmax(x, mask)
    y = ag.masked_row_softmax(x, mask, allow_empty=True)
    assert y.values[0, 1] == 0 and y.values[1].tolist() == [0, 0, 0]
    assert y.empty.tolist() == [False, True]
    np.testing.assert_allclose(y.values[0].sum(), 1, atol=1e-15)


def test_segment_softmax_matches_loop():
    rng = np.random.default_rng(1)
    seg = np.array([0, 0, 1, 2, 2, 2])
    x = rng.standard_normal((6, 1))
    y = ag.segment_softmax(Tensor(x), seg, 4).values[:, 0]
    for s in range(3):
        e = np.exp(x[seg == s, 0])
        np.testing.assert_allclose(y[seg == s], e / e.sum(), atol=1e-15)


def test_scatter_and_gather_match_loops():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((5, 3))
    idx = np.array([4, 0, 0, 2, 4, 4])
    np.testing.assert_array_equal(ag.gather_rows(Tensor(a), idx).values, a[idx])
    msgs = rng.standard_normal((6, 3))
    expect = np.zeros((5, 3))
    for e, i in enumerate(idx):
        expect[i] += msgs[e]
    np.testing.assert_allclose(ag.scatter_add_rows(Tensor(msgs), idx, 5).values, expect, atol=1e-15)


def test_broadcast_gradients_reduce():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    row = Tensor(np.ones((1, 2)), requires_grad=True)
    ga, gr = backprop(lambda: ag.sum(a + row), a, row)
    np.testing.assert_array_equal(gr, [[3, 3]])
    np.testing.assert_array_equal(ga, np.ones((3, 2)))


def test_shape_errors():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2, 2)))
    with pytest.raises(ShapeError):
        ag.cross_entropy(Tensor(np.zeros((2, 2))), [0, 3])


def test_no_tape_records_nothing():
    x = Tensor([[1.0]], requires_grad=True)
    with Tape() as tape:
        with ag.no_tape():
            y = x * x
        assert not tape.nodes and not y.requires_grad


@pytest.mark.filterwarnings("ignore:overflow")
def test_grad_check_rejects_non_finite():
    x = Tensor([[1000.0]], requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(lambda: ag.exp(x * 1.0), [x], eps=1.0)


def test_grad_check_surrogate_used_on_both_paths():
    m = Tensor([[0.2, 0.7]], requires_grad=True)
    # the indicator forward would give a zero numeric gradient; the surrogate gives 1
    assert grad_check(lambda: ag.sum(ag.straight_through_threshold(m, 0.5)), [m]) < 1e-9


def test_full_model_directional_derivative():
    """Model gradient along random directions against a central difference.

    Per-entry relative errors can be dominated by gradients near the
    finite-difference noise floor; a projection onto a dense random direction
    is not, so this checks the backward pass as a whole.
    """
    (name, f, params), = model_cases(0, ("full",))
    with ag.surrogate_sampling():
        with Tape() as tape:
            loss = f()
            tape.backward(loss)
        grads = [p.grad.copy() for p in params]
        rng = np.random.default_rng(0)
        for _ in range(3):
            dirs = [rng.standard_normal(p.values.shape) for p in params]
            analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
            h = 1e-6
            for p, d in zip(params, dirs):
                p.values += h * d
            up = f().item()
            for p, d in zip(params, dirs):
                p.values -= 2 * h * d
            down = f().item()
            for p, d in zip(params, dirs):
                p.values += h * d
            numeric = (up - down) / (2 * h)
            assert abs(analytic - numeric) <= 1e-6 * max(1.0, abs(numeric)), (analytic, numeric)
