"""Continuous-time cells and their sparse wiring.

LTC: a gated leak ODE
    dx/dt = -(1/tau + g) * x + g * A,   g = sigmoid(W_gx x + W_gi u + b_g)
whose effective decay rate varies with state and input.  The fused step is a
semi-implicit update (implicit in the decay, explicit in the gate) that is
unconditionally bounded:

    x' = (x + dt * g * A) / (1 + dt * (1/tau + g))

CfC: a solver-free cell mixing two tanh heads through a gate that decays
with the elapsed time gap.  SSM: a dense linear state-space cell whose state
matrix is modulated by a scalar drive.  NCP: four-layer sparse wiring
(sensory -> inter -> command -> motor, with command recurrence) realised as
binary masks over cell weights.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import (RngState, Tensor1, Tensor2, matvec, sigmoid, softplus,
                       tanh_ew)

#: additive floor keeping tau = softplus(tau_raw) + TAU_FLOOR away from zero
TAU_FLOOR = 0.05


@dataclass
class LtcParams:
    """Liquid time-constant cell parameters.

    ``tau_raw`` is unconstrained; the effective time constant is
    softplus(tau_raw) + TAU_FLOOR > 0.  The same gate network modulates both
    the decay term and the coupling to the bias vector A.
    """

    W_gx: Tensor2   # (n, n) gate weights on the state
    W_gi: Tensor2   # (n, m) gate weights on the input
    b_g: Tensor1    # (n,)
    tau_raw: Tensor1
    A: Tensor1
    W_out: Tensor2  # (o, n)
    b_out: Tensor1  # (o,)

    @property
    def tau(self) -> Tensor1:
        return softplus(self.tau_raw) + TAU_FLOOR


@dataclass
class CfcParams:
    """Closed-form cell: three affine heads over [x, u], state block first."""

    W_f: Tensor2   # (n, n+m), softplus output -> strictly positive rate
    b_f: Tensor1
    W_g: Tensor2   # (n, n+m), tanh output
    b_g: Tensor1
    W_h: Tensor2   # (n, n+m), tanh output
    b_h: Tensor1
    W_out: Tensor2
    b_out: Tensor1


@dataclass
class SsmParams:
    """Dense liquid state-space cell: dx/dt = (A + u diag(B)) x + B u."""

    A: Tensor2  # (n, n)
    B: Tensor1  # (n,)
    C: Tensor2  # (o, n) readout


def ltc_gate(p: LtcParams, x: Tensor1, u: Tensor1) -> Tensor1:
    return sigmoid(matvec(p.W_gx, x) + matvec(p.W_gi, u) + p.b_g)


def ltc_rhs(p: LtcParams, x: Tensor1, u: Tensor1) -> Tensor1:
    """State derivative of the LTC cell under input u."""
    g = ltc_gate(p, x, u)
    return -(1.0 / p.tau + g) * x + g * p.A


def ltc_step_fused(p: LtcParams, x: Tensor1, u: Tensor1, dt: float) -> Tensor1:
    """Semi-implicit fixed step; denominator > 1, so always well defined.

    Satisfies |x'|_inf <= max(|x|_inf, |A|_inf) for every dt > 0 and any
    gate value in (0, 1).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = ltc_gate(p, x, u)
    return (x + dt * g * p.A) / (1.0 + dt * (1.0 / p.tau + g))


def cfc_step(p: CfcParams, x: Tensor1, u: Tensor1, t_gap: float) -> Tensor1:
    """Closed-form update: sigmoid(-f * t_gap) mixes the g and h heads.

    At t_gap = 0 the mix is 50/50; as t_gap grows the state relaxes toward
    the h head (f > 0 via softplus).  Output lies between g and h
    elementwise, hence inside [-1, 1].
    """
    if t_gap < 0:
        raise ValueError("t_gap must be >= 0")
    z = np.concatenate([x, u])
    f = softplus(matvec(p.W_f, z) + p.b_f)
    g = tanh_ew(matvec(p.W_g, z) + p.b_g)
    h = tanh_ew(matvec(p.W_h, z) + p.b_h)
    gate = sigmoid(-f * t_gap)
    return gate * g + (1.0 - gate) * h


def ssm_step(p: SsmParams, x: Tensor1, u: float, dt: float):
    """Explicit Euler step of the input-modulated linear dynamics.

    The drive u is a scalar per block; (A + B u) is read as A + u * diag(B).
    Returns the new state and the readout y = C x'.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dx = matvec(p.A, x) + u * (p.B * x) + p.B * u
    x_new = x + dt * dx
    return x_new, matvec(p.C, x_new)


# ---------------------------------------------------------------------------
# NCP wiring
# ---------------------------------------------------------------------------

@dataclass
class NcpWiring:
    """Binary masks of a four-layer sparse circuit.

    Hidden neurons are ordered [inter, command, motor]; sensory "neurons"
    are the input features.  Each mask is (targets, sources).
    """

    layer_sizes: tuple[int, int, int, int]  # (sensory, inter, command, motor)
    sensory_inter: np.ndarray
    inter_command: np.ndarray
    command_command: np.ndarray
    command_motor: np.ndarray
    seed: int
    stream_id: int

    @property
    def hidden(self) -> int:
        _, i, c, mo = self.layer_sizes
        return i + c + mo

    def synapse_count(self) -> int:
        return int(self.sensory_inter.sum() + self.inter_command.sum() +
                   self.command_command.sum() + self.command_motor.sum())

    def state_mask(self) -> np.ndarray:
        """(n, n) mask of allowed hidden-to-hidden gate weights."""
        _, i, c, mo = self.layer_sizes
        n = i + c + mo
        mask = np.zeros((n, n))
        mask[i:i + c, :i] = self.inter_command
        mask[i:i + c, i:i + c] = self.command_command
        mask[i + c:, i:i + c] = self.command_motor
        return mask

    def input_mask(self) -> np.ndarray:
        """(n, sensory) mask of allowed input-to-hidden gate weights."""
        s, i, c, mo = self.layer_sizes
        n = i + c + mo
        mask = np.zeros((n, s))
        mask[:i, :] = self.sensory_inter
        return mask

    def output_mask(self, output_dim: int) -> np.ndarray:
        """(o, n) readout mask: only motor neurons are read."""
        _, i, c, mo = self.layer_sizes
        n = i + c + mo
        mask = np.zeros((output_dim, n))
        mask[:, i + c:] = 1.0
        return mask


def _sample_distinct(rng: RngState, pool: int, count: int) -> list[int]:
    """count distinct indices from range(pool) via partial Fisher-Yates."""
    idx = list(range(pool))
    for j in range(count):
        k = j + rng.randint_below(pool - j)
        idx[j], idx[k] = idx[k], idx[j]
    return idx[:count]


def _wire_pair(rng: RngState, n_src: int, n_tgt: int, fanout: int):
    """Each source gets `fanout` distinct targets; orphaned targets get one
    extra inbound edge from a random source.  Fanout is clamped to the
    target layer size (full connectivity at saturation)."""
    fanout = min(fanout, n_tgt)
    mask = np.zeros((n_tgt, n_src))
    for src in range(n_src):
        for tgt in _sample_distinct(rng, n_tgt, fanout):
            mask[tgt, src] = 1.0
    for tgt in range(n_tgt):
        if mask[tgt].sum() == 0:
            mask[tgt, rng.randint_below(n_src)] = 1.0
    return mask


def build_ncp_wiring(rng: RngState, layer_sizes, fanouts,
                     recurrent_fanout: int = 2) -> NcpWiring:
    """Draw a sparse four-layer wiring, deterministic per rng stream.

    ``fanouts`` gives the per-source out-degree of the three feedforward
    stages (sensory->inter, inter->command, command->motor);
    ``recurrent_fanout`` the out-degree of command-layer recurrence.
    """
    s, i, c, mo = (int(v) for v in layer_sizes)
    if min(s, i, c, mo) < 1:
        raise ValueError("all layer sizes must be >= 1")
    f1, f2, f3 = (int(v) for v in fanouts)
    if min(f1, f2, f3) < 1 or recurrent_fanout < 1:
        raise ValueError("fanouts must be >= 1")
    return NcpWiring(
        layer_sizes=(s, i, c, mo),
        sensory_inter=_wire_pair(rng, s, i, f1),
        inter_command=_wire_pair(rng, i, c, f2),
        command_command=_wire_pair(rng, c, c, recurrent_fanout),
        command_motor=_wire_pair(rng, c, mo, f3),
        seed=rng.seed,
        stream_id=rng.stream_id,
    )


def apply_wiring(wiring: NcpWiring, params):
    """Mask an LtcParams or CfcParams in place and return it.

    Gate weights outside the wiring graph become exactly 0; the training
    loop keeps them there by masking gradients the same way.
    """
    n = wiring.hidden
    sm = wiring.state_mask()
    im = wiring.input_mask()
    if isinstance(params, LtcParams):
        if params.W_gx.shape != sm.shape or params.W_gi.shape != im.shape:
            raise ValueError("wiring does not match LTC weight shapes")
        params.W_gx *= sm
        params.W_gi *= im
        params.W_out *= wiring.output_mask(params.W_out.shape[0])
        return params
    if isinstance(params, CfcParams):
        if params.W_f.shape != (n, n + im.shape[1]):
            raise ValueError("wiring does not match CfC weight shapes")
        for w in (params.W_f, params.W_g, params.W_h):
            w[:, :n] *= sm
            w[:, n:] *= im
        params.W_out *= wiring.output_mask(params.W_out.shape[0])
        return params
    raise TypeError("apply_wiring expects LtcParams or CfcParams")
