"""Gate variables and binary masks.

Every gated weight carries a real-valued bernoulli parameter ("gate").
Masks are realized from the gates either by thresholding at 0.5 (the
deterministic maximum-likelihood draw) or by an unbiased bernoulli draw
from an explicitly seeded generator. Gradients pass straight through
the draw and the clip (derivative 1 everywhere), so the gradient that
reaches a raw gate equals the gradient of the loss w.r.t. its mask
entry.

Gate tensors are ordinary trainable :class:`~sparsegate.tensor.Tensor`
leaves; the trainer projects them back into [0,1] after every step, so
the stored value is always a valid bernoulli parameter.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


def clip(x):
    """Piecewise-linear squash into [0,1]: 1 for x >= 1, 0 for x <= 0."""
    return np.clip(x, 0.0, 1.0)


def make_gates(shape, value, trainable=True, name=None):
    """A gate tensor of the given shape, filled with a constant in [0,1]."""
    g = np.full(shape, value, dtype=np.float32)
    return Tensor(g, requires_grad=trainable, name=name)


@dataclass(frozen=True)
class BinaryMask:
    """A realized {0,1} draw of a gate tensor (the index-set entries)."""

    gs: np.ndarray  # float32, every entry exactly 0.0 or 1.0
    draw_mode: str  # "ml" or "unbiased"
    seed: int | None = None

    @property
    def nnz(self):
        return int(np.count_nonzero(self.gs))

    @property
    def size(self):
        return int(self.gs.size)


def _gate_values(g):
    return g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float32)


def draw_ml(g):
    """Deterministic maximum-likelihood draw: 1 where clip(g) >= 0.5.

    The tie at exactly 0.5 maps to 1, consistent with 0.49 being the
    canonical "off" pre-initialization value.
    """
    v = _gate_values(g)
    return BinaryMask((clip(v) >= 0.5).astype(np.float32), "ml")


def draw_unbiased(g, rng):
    """Unbiased bernoulli draw: each entry is 1 with probability clip(g).

    `rng` is a seeded ``numpy.random.Generator`` or an integer seed; no
    global random state is touched.
    """
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    v = clip(_gate_values(g))
    gs = (rng.random(v.shape) < v).astype(np.float32)
    return BinaryMask(gs, "unbiased", seed)


def ste_backward(upstream_grad):
    """Straight-through gradient rule: d(mask)/d(gate) treated as 1.

    The bernoulli/threshold draw and the clip are both crossed as if
    they were identity functions, so the upstream gradient w.r.t. the
    mask is returned unchanged as the gradient w.r.t. the raw gate.
    """
    return upstream_grad


def apply_mask(w, mask):
    """Elementwise product W * mask, differentiable w.r.t. W only."""
    gs = mask.gs
    if w.data.shape != gs.shape:
        raise ShapeError(f"apply_mask: weight {w.data.shape} vs mask {gs.shape}")

    def back(up):
        return (up * gs,)

    return Tensor._wrap(w.data * gs, (w,), back)


def apply_mask_ste(w, gate_tensor, mask):
    """Masked weight W * mask with straight-through gradient to the gates.

    Gradients: dL/dW = upstream * mask (masked-off weights get exact
    zeros), and dL/dgate = ste_backward(upstream * W) = upstream * W.
    """
    gs = mask.gs
    if w.data.shape != gs.shape or gate_tensor.data.shape != gs.shape:
        raise ShapeError(
            f"apply_mask_ste: weight {w.data.shape}, gates "
            f"{gate_tensor.data.shape}, mask {gs.shape} must all match"
        )
    wd = w.data

    def back(up):
        return up * gs, ste_backward(up * wd)

    return Tensor._wrap(wd * gs, (w, gate_tensor), back)
