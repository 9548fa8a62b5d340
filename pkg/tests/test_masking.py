import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from automan import autodiff as ad
from automan.errors import ShapeError
from automan.masking import Mask, global_mask_forward, mask_forward, temporal_mask_forward, top_h_select

logit_vectors = st.integers(2, 12).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-4, 4, allow_nan=False))
)


def mask_with(logits, h):
    m = Mask(len(logits), h)
    m.logits.data[:] = logits
    return m


def test_top_h_examples():
    assert top_h_select([0.5, 0.1, 0.9], 2).tolist() == [0, 2]
    assert top_h_select([1.0, 1.0, 1.0, 1.0], 2).tolist() == [0, 1]
    assert top_h_select([3.0, 1.0, 2.0], 3).tolist() == [0, 1, 2]


@pytest.mark.parametrize("h", [0, 4])
def test_top_h_out_of_range(h):
    with pytest.raises(ValueError):
        top_h_select([1.0, 2.0, 3.0], h)


def test_uniform_logits_keep_first_positions():
    sel, out = mask_forward(mask_with(np.zeros(4), 2), ad.constant(np.ones((3, 4))))
    assert sel.indices.tolist() == [0, 1]
    np.testing.assert_allclose(sel.weights, [0.25, 0.25])
    assert out.shape == (3, 2)


def test_dominant_logit_weight():
    sel, _ = mask_forward(mask_with(np.array([2.0, 0.0, 0.0]), 1), ad.constant(np.ones((1, 3))))
    assert sel.indices.tolist() == [0]
    assert sel.weights[0] == pytest.approx(np.exp(2) / (np.exp(2) + 2), abs=1e-12)
    assert sel.weights[0] == pytest.approx(0.7870, abs=5e-5)


def test_output_scales_kept_columns():
    X = np.arange(12.0).reshape(3, 4)
    m = mask_with(np.array([0.0, 1.0, 0.0, 2.0]), 2)
    sel, out = mask_forward(m, ad.constant(X))
    np.testing.assert_allclose(out.data, X[:, [1, 3]] * sel.weights)


def test_non_selected_column_is_ignored():
    m = mask_with(np.array([0.0, 1.0, 0.0, 2.0]), 2)
    X = np.random.default_rng(0).normal(size=(5, 4))
    Y = X.copy()
    Y[:, 0] += 100.0
    np.testing.assert_array_equal(mask_forward(m, ad.constant(X))[1].data, mask_forward(m, ad.constant(Y))[1].data)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        mask_forward(Mask(3, 2), ad.constant(np.ones((2, 4))))


@pytest.mark.parametrize("size,h", [(0, 1), (3, 0), (3, 4)])
def test_bad_mask_config(size, h):
    with pytest.raises(ValueError):
        Mask(size, h)


def test_global_width_is_fixed():
    m = Mask(40, 16, np.random.default_rng(1))
    X = ad.constant(np.random.default_rng(2).normal(size=(7, 40)))
    for _ in range(3):
        assert global_mask_forward(m, X).shape == (7, 16)
        m.logits.data += np.random.default_rng(3).normal(size=40)


def test_global_uniform_logits():
    sel, _ = mask_forward(mask_with(np.zeros(40), 16), ad.constant(np.ones((1, 40))))
    assert sel.indices.tolist() == list(range(16))
    np.testing.assert_allclose(sel.weights, 1 / 40)


def test_temporal_uniform_keeps_earliest_steps():
    sel, out = temporal_mask_forward(mask_with(np.zeros(8), 5), ad.constant(np.ones((2, 8))))
    assert sel.indices.tolist() == [0, 1, 2, 3, 4]
    np.testing.assert_allclose(sel.weights, 1 / 8)
    assert out.shape == (2, 5)


def test_every_logit_receives_gradient():
    rng = np.random.default_rng(4)
    d, h = 10, 3
    m = Mask(d, h, rng)
    X = ad.constant(rng.normal(size=(20, d)))
    _, out = mask_forward(m, X)
    g = ad.backward((out * ad.constant(rng.normal(size=(20, h)))).sum(), [m.logits])[m.logits]
    assert (np.abs(g) > 1e-12).sum() >= d - h
    sel = m.selection().indices
    assert np.all(np.abs(np.delete(g, sel)) > 1e-12)


def test_mask_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    m = Mask(6, 3, rng)
    m.logits.data[:] = [2.0, -1.0, 0.5, 1.5, 0.0, -0.5]
    X = ad.constant(rng.normal(size=(4, 6)))
    W = ad.constant(rng.normal(size=(4, 3)))
    err = ad.finite_difference_check(lambda t: (mask_forward(m, X)[1] * W).sum(), m.logits, eps=1e-6)
    assert err < 1e-4


@given(logit_vectors, st.data())
def test_selection_invariants(logits, data):
    h = data.draw(st.integers(1, len(logits)))
    idx = top_h_select(logits, h)
    assert len(idx) == h
    assert np.all(np.diff(idx) > 0)
    assert int(np.argmax(logits)) in idx
    m = mask_with(logits, h)
    sel = m.selection()
    assert np.all(sel.weights > 0) and sel.weights.sum() <= 1 + 1e-12


@given(logit_vectors, st.floats(-20, 20))
def test_shift_invariance(logits, c):
    h = max(1, len(logits) // 2)
    a, b = mask_with(logits, h).selection(), mask_with(logits + c, h).selection()
    # a shift can reorder logits that differ by an ulp; compare only when the order is unambiguous
    gap = np.sort(logits)[::-1]
    if h < len(logits) and gap[h - 1] - gap[h] < 1e-9:
        return
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9)


def test_deterministic():
    m = Mask(5, 2, np.random.default_rng(9))
    X = ad.constant(np.random.default_rng(10).normal(size=(3, 5)))
    a, b = mask_forward(m, X), mask_forward(m, X)
    np.testing.assert_array_equal(a[0].indices, b[0].indices)
    np.testing.assert_array_equal(a[1].data, b[1].data)
