"""Gradient engine: exact BPTT gradients validated against finite differences.

A sequence model is anything exposing

    params   -- ParamVector (flat float64 buffer with named segments)
    mask     -- optional flat 0/1 array marking trainable entries
    forward(inputs)                 -> (pred, cache)
    backward(inputs, cache, dpred)  -> flat gradient array

The loss is always mean-squared error over the batch.  Cell backward passes
are hand-derived; their single correctness contract is agreement with
central finite differences, which this module also provides as the oracle.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple


class ParamVector:
    """Named contiguous spans over one flat float64 buffer.

    Views share memory with the buffer, so optimizers can update ``data``
    in place while cells read their weight matrices through ``view``.
    """

    def __init__(self, segment_shapes):
        self.segments: dict[str, Segment] = {}
        offset = 0
        for name, shape in segment_shapes:
            if name in self.segments:
                raise ValueError(f"duplicate segment name: {name}")
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            self.segments[name] = Segment(name, offset, tuple(shape))
            offset += size
        self.data = np.zeros(offset, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    def view(self, name: str) -> np.ndarray:
        seg = self.segments[name]
        size = int(np.prod(seg.shape, dtype=np.int64)) if seg.shape else 1
        return self.data[seg.offset:seg.offset + size].reshape(seg.shape)

    def zeros_like(self) -> "ParamVector":
        out = ParamVector([])
        out.segments = self.segments
        out.data = np.zeros_like(self.data)
        return out

    def copy(self) -> "ParamVector":
        out = ParamVector([])
        out.segments = self.segments
        out.data = self.data.copy()
        return out


#: gradient buffers share the ParamVector layout
GradVector = ParamVector


@dataclass
class Batch:
    """One training batch: inputs (B, T, F) and next-step targets (B, O)."""

    inputs: np.ndarray
    targets: np.ndarray


def _check_batch(model, batch):
    if batch.inputs.ndim != 3:
        raise ValueError(f"batch inputs must be (B, T, F), "
                         f"got {batch.inputs.shape}")
    if batch.inputs.shape[2] != model.input_dim:
        raise ValueError(f"batch feature dim {batch.inputs.shape[2]} != "
                         f"model input dim {model.input_dim}")
    if batch.targets.shape != (batch.inputs.shape[0], model.output_dim):
        raise ValueError(f"batch targets shape {batch.targets.shape} != "
                         f"({batch.inputs.shape[0]}, {model.output_dim})")


def batch_loss(model, batch) -> float:
    """MSE of the model on the batch (mean over all target elements)."""
    _check_batch(model, batch)
    pred, _ = model.forward(batch.inputs)
    err = pred - batch.targets
    return float(np.mean(err * err))


def loss_and_grad(model, batch):
    """MSE loss and its exact gradient w.r.t. every model parameter.

    For masked (wired) models the gradient is projected onto the trainable
    subspace, so masked-out weights never move.
    """
    _check_batch(model, batch)
    pred, cache = model.forward(batch.inputs)
    err = pred - batch.targets
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss: training diverged")
    dpred = (2.0 / err.size) * err
    grad = model.backward(batch.inputs, cache, dpred)
    mask = getattr(model, "mask", None)
    if mask is not None:
        grad = grad * mask
    return loss, grad


def finite_diff_grad(model, batch, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, the independent oracle for BPTT.

    Perturbs every parameter in turn; masked entries are projected to zero
    exactly like loss_and_grad so the two are directly comparable.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    theta = model.params.data
    grad = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        orig = theta[i]
        theta[i] = orig + h
        up = batch_loss(model, batch)
        theta[i] = orig - h
        down = batch_loss(model, batch)
        theta[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    mask = getattr(model, "mask", None)
    if mask is not None:
        grad = grad * mask
    return grad


def grad_check(model, batch, h: float = 1e-5) -> float:
    """Max relative disagreement between BPTT and finite differences.

    Per parameter: |analytic - fd| / max(1e-8, |analytic| + |fd|).
    """
    _, analytic = loss_and_grad(model, batch)
    fd = finite_diff_grad(model, batch, h)
    if analytic.shape[0] == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom))
