"""Trainable sequence models for every cell family.

A model runs its cell over an input window (zero initial state), reads the
final hidden state through a linear head, and predicts the next step.  The
time-stepping hot loops live in the backend kernels; this module owns
parameter layout, initialization, layer stacking (max 2), NCP masking, and
the solver plumbing for the liquid cells.

Gradients: ``backward`` walks the recorded unrolled computation, so training
always differentiates a fixed-step discretization.  An LTC configured with
an adaptive (dopri5) or rk4 solver evaluates with that solver but trains on
the explicit-Euler surrogate over the same span; see LtcModel.
"""

import numpy as np

from . import discrete_cells as dc
from ._backend import kernels
from .graddiff import ParamVector
from .liquid_cells import TAU_FLOOR, NcpWiring
from .numerics import RngState, glorot_init, sigmoid, softplus, uniform_init
from .solvers import SolverConfig, dopri5_integrate, rk4_step

FAMILIES = ("rnn", "lstm", "gru", "ltc", "cfc", "ssm")


def _zeros(*shape):
    return np.zeros(shape, dtype=np.float64)


def _contig(x):
    return np.ascontiguousarray(x, dtype=np.float64)


class SequenceModel:
    """Shared layout/readout machinery; families fill in the layer passes."""

    family = "?"

    def __init__(self, input_dim, output_dim, hidden, layers=1, rng=None,
                 wiring=None):
        if layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        if wiring is not None and layers != 1:
            raise ValueError("NCP wiring supports single-layer models only")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.hidden = int(hidden)
        self.layers = int(layers)
        self.wiring = wiring
        segs = []
        for li in range(self.layers):
            m = self.input_dim if li == 0 else self.hidden
            segs.extend(self._layer_segments(li, m))
        segs.extend(self._head_segments())
        self.params = ParamVector(segs)
        self.mask = None
        rng = rng if rng is not None else RngState(0, 0)
        self._init_params(rng)
        if wiring is not None:
            self.mask = self._build_mask(wiring)
            self.params.data *= self.mask

    # -- layout ------------------------------------------------------------

    def _layer_segments(self, li, m):
        raise NotImplementedError

    def _head_segments(self):
        return [("W_out", (self.output_dim, self.hidden)),
                ("b_out", (self.output_dim,))]

    def p(self, name):
        return self.params.view(name)

    def _gview(self, flat, name):
        seg = self.params.segments[name]
        size = int(np.prod(seg.shape, dtype=np.int64)) if seg.shape else 1
        return flat[seg.offset:seg.offset + size].reshape(seg.shape)

    @property
    def param_count(self):
        return self.params.size

    @property
    def effective_param_count(self):
        """Trainable scalars after masking (equals param_count unwired)."""
        if self.mask is None:
            return self.params.size
        return int(self.mask.sum())

    # -- init ----------------------------------------------------------------

    def _init_params(self, rng):
        """Glorot for matrices, zeros for biases, in segment order."""
        for name, seg in self.params.segments.items():
            if len(seg.shape) == 2:
                self.params.view(name)[:] = glorot_init(rng, *seg.shape)

    def _build_mask(self, wiring):
        raise ValueError(f"family {self.family!r} does not support wiring")

    # -- forward/backward ----------------------------------------------------

    def _layer_forward(self, li, X):
        """Run layer li over X (B,T,m); return (per-step outputs, cache)."""
        raise NotImplementedError

    def _layer_backward(self, li, X, cache, dOut, grad):
        """Accumulate layer grads; return cotangent of X (B,T,m)."""
        raise NotImplementedError

    def forward(self, X):
        X = _contig(X)
        if X.ndim != 3 or X.shape[2] != self.input_dim:
            raise ValueError(f"expected inputs (B, T, {self.input_dim}), "
                             f"got {X.shape}")
        caches = []
        inp = X
        for li in range(self.layers):
            out, cache = self._layer_forward(li, inp)
            caches.append((inp, cache))
            inp = _contig(out)
        h_last = inp[:, -1]
        pred = h_last @ self.p("W_out").T + self.p("b_out")
        return pred, (caches, h_last)

    def backward(self, X, cache, dpred):
        caches, h_last = cache
        grad = np.zeros(self.params.size)
        self._gview(grad, "W_out")[:] = dpred.T @ h_last
        self._gview(grad, "b_out")[:] = dpred.sum(axis=0)
        B, T = X.shape[0], X.shape[1]
        dOut = _zeros(B, T, self.hidden)
        dOut[:, -1] = dpred @ self.p("W_out")
        for li in range(self.layers - 1, -1, -1):
            inp, lcache = caches[li]
            dOut = self._layer_backward(li, inp, lcache, dOut, grad)
        return grad

    def predict(self, X):
        """Inference pass (same as the training path unless overridden)."""
        pred, _ = self.forward(X)
        return pred


class RnnModel(SequenceModel):
    family = "rnn"

    def _layer_segments(self, li, m):
        n = self.hidden
        return [(f"l{li}.W_xh", (n, m)), (f"l{li}.W_hh", (n, n)),
                (f"l{li}.b_h", (n,))]

    def _layer_forward(self, li, X):
        B, T, _ = X.shape
        H = _zeros(B, T + 1, self.hidden)
        kernels.rnn_forward(X, self.p(f"l{li}.W_xh"), self.p(f"l{li}.W_hh"),
                            self.p(f"l{li}.b_h"), H)
        return H[:, 1:], H

    def _layer_backward(self, li, X, H, dOut, grad):
        dX = _zeros(*X.shape)
        kernels.rnn_backward(X, H, self.p(f"l{li}.W_xh"),
                             self.p(f"l{li}.W_hh"), dOut,
                             self._gview(grad, f"l{li}.W_xh"),
                             self._gview(grad, f"l{li}.W_hh"),
                             self._gview(grad, f"l{li}.b_h"), dX)
        return dX


class LstmModel(SequenceModel):
    family = "lstm"

    def _layer_segments(self, li, m):
        n = self.hidden
        segs = []
        for gate in ("f", "i", "c", "o"):
            segs.append((f"l{li}.W_{gate}", (n, n + m)))
        for gate in ("f", "i", "c", "o"):
            segs.append((f"l{li}.b_{gate}", (n,)))
        return segs

    def _layer_forward(self, li, X):
        B, T, _ = X.shape
        n = self.hidden
        H = _zeros(B, T + 1, n)
        C = _zeros(B, T + 1, n)
        GF, GI, GC, GO = (_zeros(B, T, n) for _ in range(4))
        kernels.lstm_forward(
            X, self.p(f"l{li}.W_f"), self.p(f"l{li}.W_i"),
            self.p(f"l{li}.W_c"), self.p(f"l{li}.W_o"),
            self.p(f"l{li}.b_f"), self.p(f"l{li}.b_i"),
            self.p(f"l{li}.b_c"), self.p(f"l{li}.b_o"),
            H, C, GF, GI, GC, GO)
        return H[:, 1:], (H, C, GF, GI, GC, GO)

    def _layer_backward(self, li, X, cache, dOut, grad):
        H, C, GF, GI, GC, GO = cache
        dX = _zeros(*X.shape)
        kernels.lstm_backward(
            X, H, C, GF, GI, GC, GO,
            self.p(f"l{li}.W_f"), self.p(f"l{li}.W_i"),
            self.p(f"l{li}.W_c"), self.p(f"l{li}.W_o"), dOut,
            self._gview(grad, f"l{li}.W_f"), self._gview(grad, f"l{li}.W_i"),
            self._gview(grad, f"l{li}.W_c"), self._gview(grad, f"l{li}.W_o"),
            self._gview(grad, f"l{li}.b_f"), self._gview(grad, f"l{li}.b_i"),
            self._gview(grad, f"l{li}.b_c"), self._gview(grad, f"l{li}.b_o"),
            dX)
        return dX


class GruModel(SequenceModel):
    family = "gru"

    def _layer_segments(self, li, m):
        n = self.hidden
        return [(f"l{li}.W_r", (n, n + m)), (f"l{li}.W_z", (n, n + m)),
                (f"l{li}.W_h", (n, n + m)), (f"l{li}.b_r", (n,)),
                (f"l{li}.b_z", (n,)), (f"l{li}.b_h", (n,))]

    def _layer_forward(self, li, X):
        B, T, _ = X.shape
        n = self.hidden
        H = _zeros(B, T + 1, n)
        GR, GZ, GC = (_zeros(B, T, n) for _ in range(3))
        kernels.gru_forward(X, self.p(f"l{li}.W_r"), self.p(f"l{li}.W_z"),
                            self.p(f"l{li}.W_h"), self.p(f"l{li}.b_r"),
                            self.p(f"l{li}.b_z"), self.p(f"l{li}.b_h"),
                            H, GR, GZ, GC)
        return H[:, 1:], (H, GR, GZ, GC)

    def _layer_backward(self, li, X, cache, dOut, grad):
        H, GR, GZ, GC = cache
        dX = _zeros(*X.shape)
        kernels.gru_backward(
            X, H, GR, GZ, GC,
            self.p(f"l{li}.W_r"), self.p(f"l{li}.W_z"), self.p(f"l{li}.W_h"),
            dOut,
            self._gview(grad, f"l{li}.W_r"), self._gview(grad, f"l{li}.W_z"),
            self._gview(grad, f"l{li}.W_h"), self._gview(grad, f"l{li}.b_r"),
            self._gview(grad, f"l{li}.b_z"), self._gview(grad, f"l{li}.b_h"),
            dX)
        return dX


class LtcModel(SequenceModel):
    """Liquid time-constant model.

    Training unrolls ``substeps`` fixed steps of size ``dt`` per input
    sample, using the fused (semi-implicit) or explicit-Euler update.  When
    the configured solver is rk4 or dopri5, ``predict`` integrates with that
    solver over the same span while training gradients come from the Euler
    unrolling -- the adaptive path stays inference-only.
    """

    family = "ltc"

    def __init__(self, input_dim, output_dim, hidden, layers=1, rng=None,
                 wiring=None, solver=None):
        self.solver = (solver or SolverConfig(kind="fused")).validate()
        super().__init__(input_dim, output_dim, hidden, layers, rng, wiring)

    @property
    def train_kind(self):
        return self.solver.kind if self.solver.kind in ("euler", "fused") \
            else "euler"

    @property
    def eval_differs_from_train(self):
        return self.solver.kind in ("rk4", "dopri5")

    def _layer_segments(self, li, m):
        n = self.hidden
        return [(f"l{li}.W_gx", (n, n)), (f"l{li}.W_gi", (n, m)),
                (f"l{li}.b_g", (n,)), (f"l{li}.tau_raw", (n,)),
                (f"l{li}.A", (n,))]

    def _init_params(self, rng):
        for name, seg in self.params.segments.items():
            if len(seg.shape) == 2:
                self.params.view(name)[:] = glorot_init(rng, *seg.shape)
            elif name.endswith("tau_raw") or name.endswith(".A"):
                self.params.view(name)[:] = uniform_init(
                    rng, seg.shape[0], -1.0, 1.0)

    def _build_mask(self, wiring):
        mask = np.ones(self.params.size)
        self._gview(mask, "l0.W_gx")[:] = wiring.state_mask()
        self._gview(mask, "l0.W_gi")[:] = wiring.input_mask()
        self._gview(mask, "W_out")[:] = wiring.output_mask(self.output_dim)
        return mask

    def _tau(self, li):
        return softplus(self.p(f"l{li}.tau_raw")) + TAU_FLOOR

    def _layer_forward(self, li, X):
        B, T, _ = X.shape
        n = self.hidden
        S = self.solver.substeps
        tau = self._tau(li)
        XS = _zeros(B, T * S + 1, n)
        G = _zeros(B, T * S, n)
        kernels.ltc_forward(X, self.p(f"l{li}.W_gx"), self.p(f"l{li}.W_gi"),
                            self.p(f"l{li}.b_g"), tau, self.p(f"l{li}.A"),
                            self.solver.dt, S,
                            1 if self.train_kind == "fused" else 0, XS, G)
        return XS[:, S::S], (XS, G, tau)

    def _layer_backward(self, li, X, cache, dOut, grad):
        XS, G, tau = cache
        S = self.solver.substeps
        dX = _zeros(*X.shape)
        dtau = np.zeros(self.hidden)
        kernels.ltc_backward(X, XS, G, self.p(f"l{li}.W_gx"),
                             self.p(f"l{li}.W_gi"), tau, self.p(f"l{li}.A"),
                             self.solver.dt, S,
                             1 if self.train_kind == "fused" else 0, dOut,
                             self._gview(grad, f"l{li}.W_gx"),
                             self._gview(grad, f"l{li}.W_gi"),
                             self._gview(grad, f"l{li}.b_g"),
                             dtau, self._gview(grad, f"l{li}.A"), dX)
        # chain through tau = softplus(tau_raw) + floor
        raw = self.p(f"l{li}.tau_raw")
        self._gview(grad, f"l{li}.tau_raw")[:] = dtau * sigmoid(raw)
        return dX

    def _rhs_batch(self, li, x, u, tau):
        g = sigmoid(x @ self.p(f"l{li}.W_gx").T +
                    u @ self.p(f"l{li}.W_gi").T + self.p(f"l{li}.b_g"))
        return -(1.0 / tau + g) * x + g * self.p(f"l{li}.A")

    def _layer_predict_adaptive(self, li, X):
        """Advance one layer with the configured rk4/dopri5 solver."""
        B, T, _ = X.shape
        n = self.hidden
        tau = self._tau(li)
        span = self.solver.span
        out = _zeros(B, T, n)
        x = _zeros(B, n)
        for t in range(T):
            u = X[:, t]
            if self.solver.kind == "rk4":
                dt = self.solver.dt
                for _ in range(self.solver.substeps):
                    x = rk4_step(lambda xs, _t: self._rhs_batch(
                        li, xs, u, tau), x, 0.0, dt)
            else:
                def rhs_flat(xf, _t):
                    return self._rhs_batch(
                        li, xf.reshape(B, n), u, tau).ravel()
                x = dopri5_integrate(rhs_flat, x.ravel(), 0.0, span,
                                     self.solver.rtol,
                                     self.solver.atol).reshape(B, n)
            out[:, t] = x
        return out

    def predict(self, X):
        if not self.eval_differs_from_train:
            return super().predict(X)
        X = _contig(X)
        inp = X
        for li in range(self.layers):
            inp = self._layer_predict_adaptive(li, inp)
        return inp[:, -1] @ self.p("W_out").T + self.p("b_out")


class CfcModel(SequenceModel):
    family = "cfc"

    def __init__(self, input_dim, output_dim, hidden, layers=1, rng=None,
                 wiring=None, t_gap=1.0):
        if t_gap < 0:
            raise ValueError("t_gap must be >= 0")
        self.t_gap = float(t_gap)
        super().__init__(input_dim, output_dim, hidden, layers, rng, wiring)

    def _layer_segments(self, li, m):
        n = self.hidden
        return [(f"l{li}.W_f", (n, n + m)), (f"l{li}.W_g", (n, n + m)),
                (f"l{li}.W_h", (n, n + m)), (f"l{li}.b_f", (n,)),
                (f"l{li}.b_g", (n,)), (f"l{li}.b_h", (n,))]

    def _build_mask(self, wiring):
        n = self.hidden
        mask = np.ones(self.params.size)
        sm, im = wiring.state_mask(), wiring.input_mask()
        for head in ("W_f", "W_g", "W_h"):
            view = self._gview(mask, f"l0.{head}")
            view[:, :n] = sm
            view[:, n:] = im
        self._gview(mask, "W_out")[:] = wiring.output_mask(self.output_dim)
        return mask

    def _layer_forward(self, li, X):
        B, T, _ = X.shape
        n = self.hidden
        XS = _zeros(B, T + 1, n)
        AF, G, Hh = (_zeros(B, T, n) for _ in range(3))
        kernels.cfc_forward(X, self.p(f"l{li}.W_f"), self.p(f"l{li}.b_f"),
                            self.p(f"l{li}.W_g"), self.p(f"l{li}.b_g"),
                            self.p(f"l{li}.W_h"), self.p(f"l{li}.b_h"),
                            self.t_gap, XS, AF, G, Hh)
        return XS[:, 1:], (XS, AF, G, Hh)

    def _layer_backward(self, li, X, cache, dOut, grad):
        XS, AF, G, Hh = cache
        dX = _zeros(*X.shape)
        kernels.cfc_backward(
            X, XS, AF, G, Hh,
            self.p(f"l{li}.W_f"), self.p(f"l{li}.W_g"), self.p(f"l{li}.W_h"),
            self.t_gap, dOut,
            self._gview(grad, f"l{li}.W_f"), self._gview(grad, f"l{li}.b_f"),
            self._gview(grad, f"l{li}.W_g"), self._gview(grad, f"l{li}.b_g"),
            self._gview(grad, f"l{li}.W_h"), self._gview(grad, f"l{li}.b_h"),
            dX)
        return dX


class SsmModel(SequenceModel):
    """Dense liquid SSM driven by a learned scalar projection of the input.

    The cell contract takes one scalar drive per step; multi-feature tasks
    funnel through u_t = w_u . x_t + b_u.  The readout is y = C x_T (no
    bias), so C doubles as the output head.
    """

    family = "ssm"

    def __init__(self, input_dim, output_dim, hidden, layers=1, rng=None,
                 wiring=None, solver=None):
        if layers != 1:
            raise ValueError("ssm supports a single layer only")
        self.solver = (solver or SolverConfig(kind="euler")).validate()
        if self.solver.kind != "euler":
            raise ValueError("ssm cell is defined by its explicit-Euler "
                             "step; solver kind must be 'euler'")
        super().__init__(input_dim, output_dim, hidden, layers, rng, wiring)

    def _layer_segments(self, li, m):
        n = self.hidden
        return [("A", (n, n)), ("B", (n,)), ("w_u", (m,)), ("b_u", ())]

    def _head_segments(self):
        return [("C", (self.output_dim, self.hidden))]

    def _init_params(self, rng):
        n = self.hidden
        self.params.view("A")[:] = glorot_init(rng, n, n) - np.eye(n)
        self.params.view("B")[:] = glorot_init(rng, n, 1).ravel()
        self.params.view("w_u")[:] = glorot_init(
            rng, 1, self.input_dim).ravel()
        self.params.view("C")[:] = glorot_init(rng, self.output_dim, n)

    def forward(self, X):
        X = _contig(X)
        if X.ndim != 3 or X.shape[2] != self.input_dim:
            raise ValueError(f"expected inputs (B, T, {self.input_dim}), "
                             f"got {X.shape}")
        B, T, _ = X.shape
        n = self.hidden
        S = self.solver.substeps
        U = _contig(X @ self.p("w_u") + self.p("b_u"))
        XS = _zeros(B, T * S + 1, n)
        kernels.ssm_forward(U, self.p("A"), self.p("B"), self.solver.dt,
                            S, XS)
        x_last = XS[:, -1]
        pred = x_last @ self.p("C").T
        return pred, (U, XS, x_last)

    def backward(self, X, cache, dpred):
        U, XS, x_last = cache
        B, T, _ = X.shape
        grad = np.zeros(self.params.size)
        self._gview(grad, "C")[:] = dpred.T @ x_last
        dH = _zeros(B, T, self.hidden)
        dH[:, -1] = dpred @ self.p("C")
        dU = _zeros(B, T)
        kernels.ssm_backward(U, XS, self.p("A"), self.p("B"),
                             self.solver.dt, self.solver.substeps, dH,
                             self._gview(grad, "A"),
                             self._gview(grad, "B"), dU)
        self._gview(grad, "w_u")[:] = np.einsum("bt,btm->m", dU, X)
        self._gview(grad, "b_u")[...] = dU.sum()
        return grad


_FAMILY_CLASSES = {
    "rnn": RnnModel,
    "lstm": LstmModel,
    "gru": GruModel,
    "ltc": LtcModel,
    "cfc": CfcModel,
    "ssm": SsmModel,
}


def build_model(family, input_dim, output_dim, hidden, layers=1, rng=None,
                solver=None, t_gap=1.0, wiring=None):
    """Construct a model; wiring is valid for single-layer ltc/cfc only."""
    if family not in _FAMILY_CLASSES:
        raise ValueError(f"unknown family: {family!r}")
    if wiring is not None:
        if family not in ("ltc", "cfc"):
            raise ValueError("NCP wiring applies to ltc or cfc models")
        if wiring.hidden != hidden:
            raise ValueError(f"wiring hidden size {wiring.hidden} != "
                             f"model hidden {hidden}")
        if wiring.layer_sizes[0] != input_dim:
            raise ValueError(f"wiring sensory size {wiring.layer_sizes[0]} "
                             f"!= input dim {input_dim}")
    kwargs = dict(rng=rng, wiring=wiring)
    if family in ("ltc", "ssm"):
        kwargs["solver"] = solver
    if family == "cfc":
        kwargs["t_gap"] = t_gap
    return _FAMILY_CLASSES[family](input_dim, output_dim, hidden, layers,
                                   **kwargs)


_CACHE_SLOTS = {"rnn": 2, "lstm": 7, "gru": 5, "cfc": 5}


def memory_estimate_bytes(model, batch_size, window):
    """Analytic float64 byte estimate: parameters (+Adam moments +grads)
    plus the activation caches of one training batch.

    A declared stand-in for process-level memory probes, which are
    platform-specific and not part of the contract.
    """
    p = 8 * model.params.size * 4  # params, grads, adam m and v
    substeps = getattr(model, "solver", None)
    s = substeps.substeps if substeps is not None else 1
    if model.family in ("ltc", "ssm"):
        slots = 2 * s + 1
    else:
        slots = _CACHE_SLOTS[model.family]
    act = 8 * batch_size * window * model.hidden * slots * model.layers
    return p + act
