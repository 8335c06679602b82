"""Token ordering tests.

The orderings for tiny grids are written out by hand; everything else is
checked as a bijection property.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossfuse import tensor as T
from crossfuse.interleave import (
    RGB,
    THERMAL,
    OcfLayout,
    build_layout,
    ocf_flatten,
    ocf_unflatten,
)
from crossfuse.tensor import Graph, ShapeError, Tensor, backward, op_forward


def _grids(rows, cols, channels=1, seed=0):
    rng = np.random.default_rng(seed)
    rgb = Tensor(rng.normal(size=(rows, cols, channels)).astype(np.float32))
    thm = Tensor(rng.normal(size=(rows, cols, channels)).astype(np.float32))
    return rgb, thm


# ---------------------------------------------------------------------------
# Hand-written orders
# ---------------------------------------------------------------------------

def test_order_1x2_golden():
    layout = build_layout(1, 2)
    assert layout.order == (
        (RGB, 0, 0), (THERMAL, 0, 0), (RGB, 0, 1), (THERMAL, 0, 1),
    )
    np.testing.assert_array_equal(layout.gather, [0, 2, 1, 3])


def test_order_1x4_golden():
    # Even columns ascending (0, 2) then odd columns descending (3, 1),
    # each pixel contributing its RGB token then its thermal token.
    layout = build_layout(1, 4)
    cols = [c for (_, _, c) in layout.order[::2]]
    assert cols == [0, 2, 3, 1]
    np.testing.assert_array_equal(layout.gather, [0, 4, 2, 6, 3, 7, 1, 5])


def test_order_2x3_column_walk():
    # Odd width: evens 0, 2 then the single odd column 1, per row.
    layout = build_layout(2, 3)
    per_row = [[c for (_, r, c) in layout.order[::2] if r == row] for row in (0, 1)]
    assert per_row == [[0, 2, 1], [0, 2, 1]]


def test_order_rows_visited_in_sequence():
    layout = build_layout(3, 2)
    rows = [r for (_, r, _) in layout.order[::2]]
    assert rows == [0, 0, 1, 1, 2, 2]


def test_order_modalities_alternate_per_pixel():
    layout = build_layout(4, 6)
    for t in range(0, layout.tokens, 2):
        m0, r0, c0 = layout.order[t]
        m1, r1, c1 = layout.order[t + 1]
        assert (m0, m1) == (RGB, THERMAL)
        assert (r0, c0) == (r1, c1)


def test_flatten_1x2_token_values():
    rgb = Tensor(np.array([[[10.0], [11.0]]], np.float32))
    thm = Tensor(np.array([[[20.0], [21.0]]], np.float32))
    out = ocf_flatten(rgb, thm)
    np.testing.assert_array_equal(out.data[:, 0], [10.0, 20.0, 11.0, 21.0])


def test_flatten_matches_gather_of_stacked_pixels():
    rgb, thm = _grids(3, 4, channels=2, seed=1)
    layout = build_layout(3, 4)
    stacked = np.concatenate(
        [rgb.data.reshape(-1, 2), thm.data.reshape(-1, 2)], axis=0
    )
    out = ocf_flatten(rgb, thm, layout)
    np.testing.assert_array_equal(out.data, stacked[list(layout.gather)])


# ---------------------------------------------------------------------------
# Bijection
# ---------------------------------------------------------------------------

def test_gather_and_scatter_are_inverse_permutations():
    layout = build_layout(5, 7)
    gather = np.asarray(layout.gather)
    scatter = np.asarray(layout.scatter)
    n = layout.tokens
    assert sorted(gather.tolist()) == list(range(n))
    np.testing.assert_array_equal(gather[scatter], np.arange(n))


def test_roundtrip_restores_both_grids():
    for rows, cols, ch in ((1, 1, 1), (1, 2, 3), (2, 3, 2), (4, 4, 5), (3, 8, 1)):
        rgb, thm = _grids(rows, cols, ch, seed=rows * 100 + cols)
        layout = build_layout(rows, cols)
        tokens = ocf_flatten(rgb, thm, layout)
        assert tokens.shape == (2 * rows * cols, ch)
        back_rgb, back_thm = ocf_unflatten(tokens, layout)
        np.testing.assert_array_equal(back_rgb.data, rgb.data)
        np.testing.assert_array_equal(back_thm.data, thm.data)


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(min_value=1, max_value=9),
    cols=st.integers(min_value=1, max_value=9),
    channels=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**20),
)
def test_roundtrip_property(rows, cols, channels, seed):
    rgb, thm = _grids(rows, cols, channels, seed)
    layout = build_layout(rows, cols)
    back_rgb, back_thm = ocf_unflatten(ocf_flatten(rgb, thm, layout), layout)
    np.testing.assert_array_equal(back_rgb.data, rgb.data)
    np.testing.assert_array_equal(back_thm.data, thm.data)


def test_layout_is_cached():
    assert build_layout(2, 2) is build_layout(2, 2)


# ---------------------------------------------------------------------------
# Gradients through the permutation
# ---------------------------------------------------------------------------

def test_flatten_gradient_is_inverse_permutation():
    rgb, thm = _grids(2, 2, channels=1, seed=3)
    with Graph() as g:
        rgb_p = T.parameter(rgb.data, "p.rgb")
        tokens = ocf_flatten(rgb_p, thm)
        weights = Tensor(np.arange(8, dtype=np.float32).reshape(8, 1))
        loss = T.reduce_sum(T.mul(tokens, weights))
    grads = backward(g, loss)
    layout = build_layout(2, 2)
    expected = np.zeros(8, np.float32)
    for slot, src in enumerate(layout.gather):
        expected[src] = slot
    np.testing.assert_array_equal(grads["p.rgb"].data.reshape(-1), expected[:4])


def test_take_rows_duplicate_indices_accumulate():
    # A gather that reads row 0 three times must sum three cotangents into
    # row 0 on the way back.
    with Graph() as g:
        x = T.parameter(np.array([[1.0], [2.0]], np.float32), "p.x")
        picked = op_forward("take_rows", [x], indices=(0, 0, 0, 1))
        loss = T.reduce_sum(picked)
    grads = backward(g, loss)
    np.testing.assert_array_equal(grads["p.x"].data, [[3.0], [1.0]])


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

def test_flatten_rejects_mismatched_modalities():
    rgb, _ = _grids(2, 2)
    _, thm = _grids(2, 3)
    with pytest.raises(ShapeError, match="shapes differ"):
        ocf_flatten(rgb, thm)


def test_flatten_rejects_wrong_rank():
    bad = Tensor(np.zeros((2, 2), np.float32))
    with pytest.raises(ShapeError, match="rank-3"):
        ocf_flatten(bad, bad)


def test_flatten_rejects_layout_for_other_grid():
    rgb, thm = _grids(2, 2)
    with pytest.raises(ShapeError, match="layout"):
        ocf_flatten(rgb, thm, build_layout(3, 3))


def test_unflatten_rejects_wrong_token_count():
    layout = build_layout(2, 2)
    with pytest.raises(ShapeError, match="token"):
        ocf_unflatten(Tensor(np.zeros((6, 1), np.float32)), layout)


def test_take_rows_rejects_out_of_range_index():
    with pytest.raises(ValueError, match="index"):
        op_forward(
            "take_rows",
            [Tensor(np.zeros((2, 1), np.float32))],
            indices=(0, 5),
        )


def test_layout_validates_dimensions():
    with pytest.raises(ValueError, match="rows >= 1"):
        build_layout(0, 3)
