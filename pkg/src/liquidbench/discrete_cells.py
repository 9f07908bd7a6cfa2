"""Discrete recurrent cells: standard RNN, LSTM, and GRU step functions.

These are the single-vector reference semantics; the training path runs the
batched sequence kernels in ``_backend``, which are tested against the step
functions here.  Gate matrices act on the concatenation [h_prev, x], state
block first.  Output activation is identity: every benchmark task is
regression under MSE.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor1, Tensor2, matvec, sigmoid, tanh_ew


def _check_vec(name, v, n):
    if v.shape != (n,):
        raise ValueError(f"{name}: expected shape ({n},), got {v.shape}")


@dataclass
class RnnParams:
    """Weights of a vanilla tanh RNN with a linear readout."""

    W_xh: Tensor2  # (n, m)
    W_hh: Tensor2  # (n, n)
    W_hy: Tensor2  # (o, n)
    b_h: Tensor1   # (n,)
    b_y: Tensor1   # (o,)


@dataclass
class LstmParams:
    """LSTM gate weights; each W_* is (n, n+m) over [h_prev, x]."""

    W_f: Tensor2
    W_i: Tensor2
    W_c: Tensor2
    W_o: Tensor2
    b_f: Tensor1
    b_i: Tensor1
    b_c: Tensor1
    b_o: Tensor1
    W_hy: Tensor2
    b_y: Tensor1


@dataclass
class GruParams:
    """GRU gate weights; each W_* is (n, n+m) over [h_prev, x]."""

    W_r: Tensor2
    W_z: Tensor2
    W_h: Tensor2
    b_r: Tensor1
    b_z: Tensor1
    b_h: Tensor1
    W_hy: Tensor2
    b_y: Tensor1


@dataclass
class CellState:
    """Carried state: hidden vector h, plus cell vector c for LSTM."""

    h: Tensor1
    c: Tensor1 | None = None


def rnn_step(p: RnnParams, h_prev: Tensor1, x: Tensor1):
    """One RNN step: h = tanh(W_hh h + W_xh x + b_h), y = W_hy h + b_y."""
    n = p.W_hh.shape[0]
    _check_vec("h_prev", h_prev, n)
    h = tanh_ew(matvec(p.W_hh, h_prev) + matvec(p.W_xh, x) + p.b_h)
    y = matvec(p.W_hy, h) + p.b_y
    return h, y


def lstm_step(p: LstmParams, s: CellState, x: Tensor1):
    """One LSTM step over gates f/i/o and candidate cell state.

    C_t = f * C_{t-1} + i * C~;  h_t = o * tanh(C_t).
    """
    n = p.W_f.shape[0]
    _check_vec("h", s.h, n)
    if s.c is None:
        raise ValueError("LSTM state needs a cell vector c")
    _check_vec("c", s.c, n)
    z = np.concatenate([s.h, x])
    f = sigmoid(matvec(p.W_f, z) + p.b_f)
    i = sigmoid(matvec(p.W_i, z) + p.b_i)
    c_tilde = tanh_ew(matvec(p.W_c, z) + p.b_c)
    o = sigmoid(matvec(p.W_o, z) + p.b_o)
    c = f * s.c + i * c_tilde
    h = o * tanh_ew(c)
    y = matvec(p.W_hy, h) + p.b_y
    return CellState(h=h, c=c), y


def gru_step(p: GruParams, h_prev: Tensor1, x: Tensor1):
    """One GRU step: h = (1-z) * h_prev + z * h~ with reset-gated candidate."""
    n = p.W_r.shape[0]
    _check_vec("h_prev", h_prev, n)
    z_in = np.concatenate([h_prev, x])
    r = sigmoid(matvec(p.W_r, z_in) + p.b_r)
    z = sigmoid(matvec(p.W_z, z_in) + p.b_z)
    h_tilde = tanh_ew(matvec(p.W_h, np.concatenate([r * h_prev, x])) + p.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    y = matvec(p.W_hy, h) + p.b_y
    return h, y


@dataclass(frozen=True)
class ModelSpec:
    """Shape description used for parameter counting."""

    family: str  # rnn | lstm | gru | ltc | cfc | ssm
    hidden: int
    input_dim: int
    output_dim: int
    layers: int = 1


def recurrent_block_count(family: str, hidden: int, input_dim: int) -> int:
    """Trainable scalars in one recurrent layer, excluding the readout."""
    n, m = hidden, input_dim
    if family == "rnn":
        return n * m + n * n + n
    if family == "lstm":
        return 4 * (n * (n + m) + n)
    if family == "gru":
        return 3 * (n * (n + m) + n)
    if family == "cfc":
        return 3 * (n * (n + m) + n)
    if family == "ltc":
        # gate (state + input + bias) plus per-neuron tau and A
        return n * n + n * m + n + n + n
    if family == "ssm":
        return n * n + n  # A and B; C is the readout
    raise ValueError(f"unknown family: {family}")


def param_count(spec: ModelSpec) -> int:
    """Exact trainable scalar count, output projection included.

    Stacked layers feed the hidden vector of layer k as the input of layer
    k+1.  The ssm family reads out through C (no bias) and drives the cell
    with a learned scalar projection of the input.
    """
    n, m, o = spec.hidden, spec.input_dim, spec.output_dim
    total = recurrent_block_count(spec.family, n, m)
    for _ in range(spec.layers - 1):
        total += recurrent_block_count(spec.family, n, n)
    if spec.family == "ssm":
        total += o * n       # C
        total += m + 1       # input projection w_u, b_u
    else:
        total += o * n + o   # W_out, b_out
    return total
