"""Order-aware interleaved flattening of RGB/thermal feature-map pairs.

A pair of (rows, cols, channels) maps becomes a single (2*rows*cols,
channels) token sequence. Rows are visited top to bottom; within a row the
even columns come first left to right, then the odd columns in reverse
(columns cols-1, cols-3, ... when cols is even), so horizontally adjacent
pixels sit near each other in the 1-d order. Each visited pixel emits its
RGB token immediately followed by its thermal token, which is what lets a
causal sequence model mix the two spectra at matching positions.

The layout is a pure permutation, cached per (rows, cols), with an exact
inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, register_op

__all__ = ["OcfLayout", "build_layout", "ocf_flatten", "ocf_unflatten"]

TAKE_OP = "take_rows"

RGB = 0
THERMAL = 1


def _take_rows_fwd(x, indices=None):
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1-d, got shape {idx.shape}")
    if x.ndim < 1:
        raise ShapeError("take_rows: input must have at least one axis")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"take_rows: index out of range for axis of size {x.shape[0]}")
    return np.ascontiguousarray(x[idx]), {"indices": idx, "rows": x.shape[0]}


def _take_rows_bwd(ctx, g):
    out = np.zeros((ctx["rows"],) + g.shape[1:], dtype=g.dtype)
    np.add.at(out, ctx["indices"], g)
    return (out,)


register_op(TAKE_OP, _take_rows_fwd, _take_rows_bwd)


@dataclass(frozen=True)
class OcfLayout:
    """Token permutation for one (rows, cols) grid.

    ``order[t]`` gives (modality, row, col) of token t, with modality 0 for
    RGB and 1 for thermal. ``gather`` holds the same thing as flat indices
    into the stacked [rgb; thermal] row-major array, and ``scatter`` is its
    inverse.
    """

    rows: int
    cols: int
    order: tuple[tuple[int, int, int], ...]
    gather: np.ndarray
    scatter: np.ndarray

    @property
    def tokens(self) -> int:
        return 2 * self.rows * self.cols


def _column_order(cols: int) -> list[int]:
    evens = list(range(0, cols, 2))
    start = cols - 1 if cols % 2 == 0 else cols - 2
    odds = list(range(start, 0, -2))
    return evens + odds


@lru_cache(maxsize=None)
def build_layout(rows: int, cols: int) -> OcfLayout:
    if rows < 1 or cols < 1:
        raise ValueError(f"layout needs rows >= 1 and cols >= 1, got ({rows}, {cols})")
    order: list[tuple[int, int, int]] = []
    for r in range(rows):
        for c in _column_order(cols):
            order.append((RGB, r, c))
            order.append((THERMAL, r, c))
    hw = rows * cols
    gather = np.array([m * hw + r * cols + c for (m, r, c) in order], dtype=np.int64)
    scatter = np.empty_like(gather)
    scatter[gather] = np.arange(gather.size, dtype=np.int64)
    gather.flags.writeable = False
    scatter.flags.writeable = False
    return OcfLayout(rows=rows, cols=cols, order=tuple(order), gather=gather, scatter=scatter)


def ocf_flatten(rgb: Tensor, thermal: Tensor, layout: Optional[OcfLayout] = None) -> Tensor:
    """Interleave an RGB/thermal map pair into one token sequence.

    Both inputs must be (rows, cols, channels) with identical shapes; the
    result is (2*rows*cols, channels).
    """
    if rgb.ndim != 3 or thermal.ndim != 3:
        raise ShapeError(f"ocf_flatten: maps must be rank-3, got {rgb.shape} and {thermal.shape}")
    if rgb.shape != thermal.shape:
        raise ShapeError(f"ocf_flatten: map shapes differ, {rgb.shape} vs {thermal.shape}")
    rows, cols, channels = rgb.shape
    if layout is None:
        layout = build_layout(rows, cols)
    elif (layout.rows, layout.cols) != (rows, cols):
        raise ShapeError(f"ocf_flatten: layout is {layout.rows}x{layout.cols}, maps are {rows}x{cols}")
    hw = rows * cols
    flat_r = T.reshape(rgb, (hw, channels))
    flat_t = T.reshape(thermal, (hw, channels))
    stacked = T.concat([flat_r, flat_t], axis=0)
    return T.op_forward(TAKE_OP, (stacked,), indices=layout.gather)


def ocf_unflatten(tokens: Tensor, layout: OcfLayout) -> tuple[Tensor, Tensor]:
    """Exact inverse of ``ocf_flatten`` for the same layout."""
    if tokens.ndim != 2:
        raise ShapeError(f"ocf_unflatten: tokens must be rank-2, got shape {tokens.shape}")
    if tokens.shape[0] != layout.tokens:
        raise ShapeError(
            f"ocf_unflatten: got {tokens.shape[0]} tokens, layout {layout.rows}x{layout.cols} "
            f"requires {layout.tokens}"
        )
    channels = tokens.shape[1]
    hw = layout.rows * layout.cols
    stacked = T.op_forward(TAKE_OP, (tokens,), indices=layout.scatter)
    flat_r = T.narrow(stacked, 0, 0, hw)
    flat_t = T.narrow(stacked, 0, hw, hw)
    rgb = T.reshape(flat_r, (layout.rows, layout.cols, channels))
    thermal = T.reshape(flat_t, (layout.rows, layout.cols, channels))
    return rgb, thermal
