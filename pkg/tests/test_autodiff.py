import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from automan import autodiff as ad
from automan.errors import NumericError, ShapeError

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def leaf(x):
    return ad.parameter(np.asarray(x, dtype=np.float64))


# -- forward -----------------------------------------------------------------


def test_matmul_shape():
    a, b = ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 4)))
    assert (a @ b).shape == (2, 4)


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(ad.softmax(ad.constant([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_reduce_sum():
    assert float(ad.reduce_sum(ad.constant([1.0, 2.0, 3.0])).data) == 6.0


def test_softmax_is_stable_for_large_logits():
    out = ad.softmax(ad.constant([1000.0, 1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5])


@pytest.mark.parametrize(
    "kind,shapes",
    [("add", [(2, 3), (4, 3)]), ("mul", [(3,), (4,)]), ("matmul", [(2, 3), (2, 3)]), ("matmul", [(3,), (3, 2)])],
)
def test_shape_mismatch_names_op_and_shapes(kind, shapes):
    xs = [ad.constant(np.ones(s)) for s in shapes]
    with pytest.raises(ShapeError) as err:
        ad.forward_op(kind, xs)
    assert err.value.op == kind
    assert str(shapes[0]) in str(err.value)


def test_unknown_op():
    with pytest.raises(ValueError, match="unknown operation"):
        ad.forward_op("nope", [ad.constant(1.0)])


def test_axis_out_of_range():
    with pytest.raises(ShapeError):
        ad.reduce_sum(ad.constant(np.ones((2, 2))), axis=3)


# -- backward ----------------------------------------------------------------


def test_bilinear_gradient():
    w = leaf([1.0, 2.0])
    loss = (w * ad.constant([3.0, 4.0])).sum()
    np.testing.assert_allclose(ad.backward(loss)[w], [3.0, 4.0])


def test_softmax_jacobian_at_zero():
    z = leaf([0.0, 0.0])
    loss = ad.take(ad.softmax(z), [0]).sum()
    np.testing.assert_allclose(ad.backward(loss)[z], [0.25, -0.25], atol=1e-15)


def test_unreached_parameter_gets_zero():
    w, unused = leaf([1.0, 2.0]), leaf(np.ones((2, 2)))
    grads = ad.backward((w * w).sum(), [w, unused])
    np.testing.assert_array_equal(grads[unused], np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    w = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        ad.backward(w * 2.0)


def test_backward_twice_is_identical():
    rng = np.random.default_rng(0)
    w = leaf(rng.normal(size=(3, 4)))
    x = ad.constant(rng.normal(size=(5, 3)))
    loss = ad.relu(x @ w).mean()
    a, b = ad.backward(loss)[w], ad.backward(loss)[w]
    np.testing.assert_array_equal(a, b)


def test_tape_matches_backward():
    rng = np.random.default_rng(1)
    w = leaf(rng.normal(size=3))
    with ad.GradientTape() as tape:
        loss = ad.exp(w * w).sum()
    np.testing.assert_array_equal(tape.gradient(loss, [w])[w], ad.backward(loss, [w])[w])
    assert all(n.op is not None for n in tape.nodes)


def test_tapes_are_thread_local():
    seen = {}

    def work(tag):
        w = leaf([1.0, 2.0])
        with ad.GradientTape() as tape:
            (w * w).sum()
        seen[tag] = len(tape.nodes)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert set(seen.values()) == {2}


def test_concat_gradient_splits_into_branches():
    rng = np.random.default_rng(2)
    a, b = leaf(rng.normal(size=(4, 2))), leaf(rng.normal(size=(4, 3)))
    wa, wb = rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
    joint = ad.backward((ad.concat([a, b], axis=1) * ad.constant(np.hstack([wa, wb]))).sum(), [a, b])
    alone_a = ad.backward((a * ad.constant(wa)).sum(), [a])[a]
    alone_b = ad.backward((b * ad.constant(wb)).sum(), [b])[b]
    np.testing.assert_array_equal(joint[a], alone_a)
    np.testing.assert_array_equal(joint[b], alone_b)


def test_take_with_repeated_indices_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    g = ad.backward(ad.take(x, [0, 0, 2]).sum())[x]
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])


def test_constants_record_no_graph():
    out = ad.constant([1.0]) * ad.constant([2.0])
    assert out.op is None and not out.requires_grad


# -- finite differences --------------------------------------------------------


def test_fd_square():
    x = leaf([3.0])
    res = ad.gradient_check(lambda t: (t * t).sum(), x, eps=1e-5)
    assert res["analytic"][0] == pytest.approx(6.0)
    assert res["rel_err"].max() < 1e-6


@pytest.mark.parametrize("eps", [1e-7, 1e-3])
def test_fd_eps_range(eps):
    with pytest.raises(ValueError):
        ad.finite_difference_check(lambda t: t.sum(), leaf([1.0]), eps=eps)


def test_fd_non_finite_names_coordinate():
    # finite at theta, but the downward step on coordinate 1 crosses zero
    x = leaf([1.0, 1e-6])
    with np.errstate(all="ignore"), pytest.raises(NumericError, match="coordinate 1"):
        ad.finite_difference_check(lambda t: ad.log(t).sum(), x, eps=1e-5)


def test_fd_restores_theta():
    x = leaf([0.3, -0.7])
    before = x.data.copy()
    ad.finite_difference_check(lambda t: (t * t * t).sum(), x)
    np.testing.assert_array_equal(x.data, before)


UNARY = {
    "exp": lambda x: ad.exp(x),
    "log": lambda x: ad.log(x * x + 0.5),
    "abs": lambda x: ad.absolute(x),
    "pow_const": lambda x: (x * x + 0.1) ** 1.7,
    "power": lambda x: ad.power(x * x + 0.5, x),
    "sigmoid": lambda x: ad.sigmoid(x),
    "softplus": lambda x: ad.softplus(x),
    "relu": lambda x: ad.relu(x),
    "neg": lambda x: -x,
    "div": lambda x: x / (x * x + 1.0),
    "sub": lambda x: x - x * x,
    "softmax": lambda x: ad.softmax(x) * ad.constant(np.arange(1.0, x.shape[-1] + 1)),
    "log_softmax": lambda x: ad.log_softmax(x) * ad.constant(np.arange(1.0, x.shape[-1] + 1)),
    "prod": lambda x: ad.reduce_prod(x, axis=-1),
    "mean": lambda x: ad.reduce_mean(x, axis=0),
    "std_normalize": lambda x: ad.std_normalize(ad.reshape(x, (1, -1))) * ad.constant(np.arange(1.0, x.shape[-1] + 1)),
    "take": lambda x: ad.take(x, [2, 0]),
    "reshape": lambda x: ad.reshape(x, (2, 2)) @ ad.constant([[1.0], [2.0]]),
}


@pytest.mark.parametrize("kind", sorted(UNARY))
def test_every_op_matches_central_differences(kind):
    """100 random points per op; kinks are avoided by keeping |x| away from 0."""
    rng = np.random.default_rng(abs(hash(kind)) % 2**32)
    fn = UNARY[kind]
    worst = 0.0
    for _ in range(100):
        v = rng.uniform(0.2, 2.0, 4) * rng.choice([-1.0, 1.0], 4)
        x = leaf(v)
        worst = max(worst, ad.finite_difference_check(lambda t: (fn(t) * fn(t)).sum(), x, eps=1e-6))
    assert worst < 1e-4


def test_matmul_and_broadcast_add_gradients():
    rng = np.random.default_rng(5)
    A, B, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2))), leaf(rng.normal(size=2))
    err = ad.finite_difference_check(lambda p: ad.relu(p[0] @ p[1] + p[2]).sum(), [A, B, b])
    assert err < 1e-4


@given(arrays(np.float64, (3, 4), elements=finite))
def test_sum_gradient_is_ones(x):
    t = leaf(x)
    np.testing.assert_array_equal(ad.backward(ad.reduce_sum(t))[t], np.ones((3, 4)))


@given(arrays(np.float64, 5, elements=finite), st.floats(-50, 50))
def test_softmax_shift_invariance(x, c):
    a = ad.softmax(ad.constant(x)).data
    b = ad.softmax(ad.constant(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.sum() == pytest.approx(1.0)
