"""Learnable importance masks with softmax-then-top-h selection.

A mask holds one logit per candidate position. The forward pass takes the
softmax over *all* logits, keeps the h largest probabilities (no
renormalisation) and scales the corresponding input columns by them. The
discarded probabilities still sit in the softmax denominator, so every
logit receives gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

DEFAULT_H = 5
DEFAULT_H_GLOBAL = 16
INIT_SCALE = 0.01


def top_h_select(logits, h: int) -> np.ndarray:
    """Indices of the ``h`` largest logits, ties to the smaller index, ascending."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 1 <= h <= logits.size:
        raise ValueError(f"top-h selection needs 1 <= h <= {logits.size}, got h={h}")
    # stable sort on the negated values keeps equal logits in index order
    order = np.argsort(-logits, kind="stable")
    return np.sort(order[:h])


@dataclass(frozen=True)
class MaskOutput:
    indices: np.ndarray
    weights: np.ndarray


class Mask:
    """Learnable logits over ``size`` positions keeping ``h`` of them."""

    def __init__(self, size: int, h: int, rng: np.random.Generator | None = None, name: str = "mask"):
        if size < 1:
            raise ValueError("mask needs at least one candidate position")
        if not 1 <= h <= size:
            raise ValueError(f"mask width h={h} must lie in [1, {size}]")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.h = h
        self.logits = ad.parameter(rng.uniform(-INIT_SCALE, INIT_SCALE, size), name=name)

    @property
    def size(self) -> int:
        return self.logits.data.size

    def selection(self) -> MaskOutput:
        """Current kept positions and their (detached) weights."""
        idx = top_h_select(self.logits.data, self.h)
        p = ad.OPS["softmax"].forward([self.logits.data], {"axis": -1})[0]
        return MaskOutput(idx, p[idx])

    def probabilities(self) -> np.ndarray:
        return ad.OPS["softmax"].forward([self.logits.data], {"axis": -1})[0]

    def __call__(self, X: Tensor) -> tuple[MaskOutput, Tensor]:
        return mask_forward(self, X)


def mask_forward(mask: Mask, X: Tensor, axis: int = -1) -> tuple[MaskOutput, Tensor]:
    """Weight the columns of ``X`` by the mask and keep the top-h of them.

    The weighting runs over the full dense matrix (zeros at discarded
    positions) before the kept columns are gathered.
    """
    if X.shape[axis] != mask.size:
        raise ShapeError("mask_forward", [mask.logits.shape, X.shape], "logits length must equal column count")
    idx = top_h_select(mask.logits.data, mask.h)
    keep = np.zeros(mask.size)
    keep[idx] = 1.0
    probs = ad.softmax(mask.logits)
    dense = probs * ad.constant(keep)
    if X.data.ndim == 2 and axis in (-1, 1):
        weighted = X * ad.reshape(dense, (1, mask.size))
    else:
        shape = [1] * X.data.ndim
        shape[axis] = mask.size
        weighted = X * ad.reshape(dense, shape)
    out = ad.take(weighted, idx, axis=axis)
    return MaskOutput(idx, probs.data[idx].copy()), out


def global_mask_forward(mask: Mask, X_glb: Tensor) -> Tensor:
    """Same mechanics as :func:`mask_forward`; output width is always ``mask.h``."""
    return mask_forward(mask, X_glb)[1]


def temporal_mask_forward(mask: Mask, W: Tensor) -> tuple[MaskOutput, Tensor]:
    """Select and weight time steps of a (samples, L) window tensor."""
    return mask_forward(mask, W)
