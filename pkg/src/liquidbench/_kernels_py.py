"""Pure-Python/NumPy fallback kernels.

This module and the compiled extension ``liquidbench._kernels_cy`` expose the
same functions with the same call signatures; ``liquidbench._backend`` picks
one at import time.  Everything here operates on preallocated, C-contiguous
float64 arrays so the two backends stay drop-in interchangeable.

Conventions shared by both backends:

* RNG state is a uint64[4] array (xoshiro256**) plus a float64[2] scratch
  ``cache`` for the spare Box-Muller normal: ``cache[0]`` is the value,
  ``cache[1]`` != 0 means it is pending.
* Gate weight matrices have shape (n, n+m) and act on the concatenation
  [h_prev, x_t]: columns [0:n] multiply the carried state, columns [n:]
  multiply the step input.
* Sequence kernels fill state arrays indexed so that slot 0 holds the
  initial state and slot t+1 holds the state after consuming step t.
* Backward kernels take ``dH`` of shape (B, T, n): the loss cotangent
  injected at each post-step carried state.  Gradient outputs are
  accumulated into caller-zeroed arrays.
"""

import math

import numpy as np

MASK64 = (1 << 64) - 1

_TWO_PI = 2.0 * math.pi
_U53 = 2.0 ** -53


# ---------------------------------------------------------------------------
# RNG: SplitMix64 seeding + xoshiro256** + Box-Muller normals
# ---------------------------------------------------------------------------

def _splitmix64(s):
    s = (s + 0x9E3779B97F4A7C15) & MASK64
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return s, z ^ (z >> 31)


def rng_seed(state, seed, stream_id):
    """Fill a uint64[4] state: four SplitMix64 outputs of seed XOR stream."""
    s = (int(seed) ^ int(stream_id)) & MASK64
    for i in range(4):
        s, out = _splitmix64(s)
        state[i] = out


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def rng_next(state):
    """One xoshiro256** draw; advances the state, returns a uint64 as int."""
    s0, s1, s2, s3 = (int(state[0]), int(state[1]), int(state[2]),
                      int(state[3]))
    result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
    t = (s1 << 17) & MASK64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


def rng_fill_uniform(state, out):
    """Fill a flat float64 array with uniforms in [0, 1): (x >> 11) * 2^-53."""
    s0, s1, s2, s3 = (int(state[0]), int(state[1]), int(state[2]),
                      int(state[3]))
    n = out.shape[0]
    for i in range(n):
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        out[i] = (result >> 11) * _U53
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


def rng_fill_normal(state, cache, out):
    """Fill with standard normals via Box-Muller.

    Each pair consumes exactly two uniform draws; the sine variate of a pair
    is cached and served before any new draw.  Uses log1p(-u1) so the radius
    is always finite.
    """
    n = out.shape[0]
    i = 0
    if n > 0 and cache[1] != 0.0:
        out[0] = cache[0]
        cache[1] = 0.0
        i = 1
    pair = np.empty(2, dtype=np.float64)
    while i < n:
        rng_fill_uniform(state, pair)
        r = math.sqrt(-2.0 * math.log1p(-pair[0]))
        theta = _TWO_PI * pair[1]
        out[i] = r * math.cos(theta)
        i += 1
        z1 = r * math.sin(theta)
        if i < n:
            out[i] = z1
            i += 1
        else:
            cache[0] = z1
            cache[1] = 1.0
    return None


# ---------------------------------------------------------------------------
# Elementwise helpers (identical formulas in the compiled backend)
# ---------------------------------------------------------------------------

def _sig(a):
    out = np.empty_like(a)
    pos = a >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


# ---------------------------------------------------------------------------
# Standard RNN
# ---------------------------------------------------------------------------

def rnn_forward(X, Wxh, Whh, bh, H):
    B, T, M = X.shape
    for t in range(T):
        a = H[:, t] @ Whh.T + X[:, t] @ Wxh.T + bh
        H[:, t + 1] = np.tanh(a)


def rnn_backward(X, H, Wxh, Whh, dH, dWxh, dWhh, dbh, dX):
    B, T, M = X.shape
    N = Whh.shape[0]
    dh = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        dh = dh + dH[:, t]
        h = H[:, t + 1]
        da = dh * (1.0 - h * h)
        dWhh += da.T @ H[:, t]
        dWxh += da.T @ X[:, t]
        dbh += da.sum(axis=0)
        dX[:, t] = da @ Wxh
        dh = da @ Whh


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def lstm_forward(X, Wf, Wi, Wc, Wo, bf, bi, bc, bo, H, C, GF, GI, GC, GO):
    B, T, M = X.shape
    N = bf.shape[0]
    for t in range(T):
        h = H[:, t]
        x = X[:, t]
        f = _sig(h @ Wf[:, :N].T + x @ Wf[:, N:].T + bf)
        i = _sig(h @ Wi[:, :N].T + x @ Wi[:, N:].T + bi)
        cc = np.tanh(h @ Wc[:, :N].T + x @ Wc[:, N:].T + bc)
        o = _sig(h @ Wo[:, :N].T + x @ Wo[:, N:].T + bo)
        C[:, t + 1] = f * C[:, t] + i * cc
        H[:, t + 1] = o * np.tanh(C[:, t + 1])
        GF[:, t] = f
        GI[:, t] = i
        GC[:, t] = cc
        GO[:, t] = o


def lstm_backward(X, H, C, GF, GI, GC, GO, Wf, Wi, Wc, Wo, dH,
                  dWf, dWi, dWc, dWo, dbf, dbi, dbc, dbo, dX):
    B, T, M = X.shape
    N = Wf.shape[0]
    dh = np.zeros((B, N))
    dc = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        dh = dh + dH[:, t]
        f = GF[:, t]
        i = GI[:, t]
        cc = GC[:, t]
        o = GO[:, t]
        c_new = C[:, t + 1]
        c_prev = C[:, t]
        h_prev = H[:, t]
        x = X[:, t]
        tc = np.tanh(c_new)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        df = dc * c_prev
        di = dc * cc
        dcc = dc * i
        dc = dc * f
        daf = df * f * (1.0 - f)
        dai = di * i * (1.0 - i)
        dac = dcc * (1.0 - cc * cc)
        dao = do * o * (1.0 - o)
        dWf[:, :N] += daf.T @ h_prev
        dWf[:, N:] += daf.T @ x
        dbf += daf.sum(axis=0)
        dWi[:, :N] += dai.T @ h_prev
        dWi[:, N:] += dai.T @ x
        dbi += dai.sum(axis=0)
        dWc[:, :N] += dac.T @ h_prev
        dWc[:, N:] += dac.T @ x
        dbc += dac.sum(axis=0)
        dWo[:, :N] += dao.T @ h_prev
        dWo[:, N:] += dao.T @ x
        dbo += dao.sum(axis=0)
        dX[:, t] = (daf @ Wf[:, N:] + dai @ Wi[:, N:] +
                    dac @ Wc[:, N:] + dao @ Wo[:, N:])
        dh = (daf @ Wf[:, :N] + dai @ Wi[:, :N] +
              dac @ Wc[:, :N] + dao @ Wo[:, :N])


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def gru_forward(X, Wr, Wz, Wh, br, bz, bh, H, GR, GZ, GC):
    B, T, M = X.shape
    N = br.shape[0]
    for t in range(T):
        h = H[:, t]
        x = X[:, t]
        r = _sig(h @ Wr[:, :N].T + x @ Wr[:, N:].T + br)
        z = _sig(h @ Wz[:, :N].T + x @ Wz[:, N:].T + bz)
        c = np.tanh((r * h) @ Wh[:, :N].T + x @ Wh[:, N:].T + bh)
        H[:, t + 1] = (1.0 - z) * h + z * c
        GR[:, t] = r
        GZ[:, t] = z
        GC[:, t] = c


def gru_backward(X, H, GR, GZ, GC, Wr, Wz, Wh, dH,
                 dWr, dWz, dWh, dbr, dbz, dbh, dX):
    B, T, M = X.shape
    N = Wr.shape[0]
    dh = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        dh = dh + dH[:, t]
        r = GR[:, t]
        z = GZ[:, t]
        c = GC[:, t]
        h_prev = H[:, t]
        x = X[:, t]
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        dWh[:, :N] += dac.T @ (r * h_prev)
        dWh[:, N:] += dac.T @ x
        dbh += dac.sum(axis=0)
        drh = dac @ Wh[:, :N]
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dWr[:, :N] += dar.T @ h_prev
        dWr[:, N:] += dar.T @ x
        dbr += dar.sum(axis=0)
        dWz[:, :N] += daz.T @ h_prev
        dWz[:, N:] += daz.T @ x
        dbz += daz.sum(axis=0)
        dh_prev = dh_prev + dar @ Wr[:, :N] + daz @ Wz[:, :N]
        dX[:, t] = dac @ Wh[:, N:] + dar @ Wr[:, N:] + daz @ Wz[:, N:]
        dh = dh_prev


# ---------------------------------------------------------------------------
# LTC: gated leak cell, unrolled with euler or fused semi-implicit substeps
#
# rhs:   dx/dt = -(1/tau + g) * x + g * A,  g = sigmoid(Wgx x + Wgi u + bg)
# euler: x' = x + dt * rhs(x)
# fused: x' = (x + dt*g*A) / (1 + dt*(1/tau + g))
#
# XS has shape (B, T*S+1, n); G caches the gate at every substep.  ``tau`` is
# the effective (positive) time constant; the softplus chain back to the raw
# parameter happens in the caller.
# ---------------------------------------------------------------------------

def ltc_forward(X, Wgx, Wgi, bg, tau, A, dt, substeps, fused, XS, G):
    B, T, M = X.shape
    inv_tau = 1.0 / tau
    k = 0
    for t in range(T):
        ui = X[:, t] @ Wgi.T + bg
        for _ in range(substeps):
            x = XS[:, k]
            g = _sig(x @ Wgx.T + ui)
            if fused:
                XS[:, k + 1] = (x + dt * g * A) / (1.0 + dt * (inv_tau + g))
            else:
                XS[:, k + 1] = x + dt * (-(inv_tau + g) * x + g * A)
            G[:, k] = g
            k += 1


def ltc_backward(X, XS, G, Wgx, Wgi, tau, A, dt, substeps, fused, dH,
                 dWgx, dWgi, dbg, dtau, dA, dX):
    B, T, M = X.shape
    N = tau.shape[0]
    inv_tau = 1.0 / tau
    tau_sq = tau * tau
    dx = np.zeros((B, N))
    k = T * substeps
    for t in range(T - 1, -1, -1):
        dx = dx + dH[:, t]
        du = np.zeros((B, M))
        for _ in range(substeps):
            k -= 1
            x = XS[:, k]
            g = G[:, k]
            if fused:
                x_new = XS[:, k + 1]
                D = 1.0 + dt * (inv_tau + g)
                dgate = dx * dt * (A - x_new) / D
                dA += (dx * dt * g / D).sum(axis=0)
                dtau += (dx * x_new * dt / (D * tau_sq)).sum(axis=0)
                dx_direct = dx / D
            else:
                dgate = dx * dt * (A - x)
                dA += (dx * dt * g).sum(axis=0)
                dtau += (dx * dt * x / tau_sq).sum(axis=0)
                dx_direct = dx * (1.0 - dt * (inv_tau + g))
            da = dgate * g * (1.0 - g)
            dWgx += da.T @ x
            dWgi += da.T @ X[:, t]
            dbg += da.sum(axis=0)
            du += da @ Wgi
            dx = dx_direct + da @ Wgx
        dX[:, t] = du


# ---------------------------------------------------------------------------
# CfC: closed-form cell, one evaluation per step
#
# f = softplus(af), gate = sigmoid(-f * t_gap), x' = gate*g + (1-gate)*h
# with af/g/h affine heads over [x, u].  AF caches head pre-activations so
# the backward pass can recover softplus'(af) = sigmoid(af).
# ---------------------------------------------------------------------------

def cfc_forward(X, Wf, bf, Wg, bg, Wh, bh, t_gap, XS, AF, G, Hh):
    B, T, M = X.shape
    N = bf.shape[0]
    for t in range(T):
        x = XS[:, t]
        u = X[:, t]
        af = x @ Wf[:, :N].T + u @ Wf[:, N:].T + bf
        g = np.tanh(x @ Wg[:, :N].T + u @ Wg[:, N:].T + bg)
        hh = np.tanh(x @ Wh[:, :N].T + u @ Wh[:, N:].T + bh)
        gate = _sig(-_softplus(af) * t_gap)
        XS[:, t + 1] = gate * g + (1.0 - gate) * hh
        AF[:, t] = af
        G[:, t] = g
        Hh[:, t] = hh


def cfc_backward(X, XS, AF, G, Hh, Wf, Wg, Wh, t_gap, dH,
                 dWf, dbf, dWg, dbg, dWh, dbh, dX):
    B, T, M = X.shape
    N = Wf.shape[0]
    dx = np.zeros((B, N))
    for t in range(T - 1, -1, -1):
        dx = dx + dH[:, t]
        af = AF[:, t]
        g = G[:, t]
        hh = Hh[:, t]
        x = XS[:, t]
        u = X[:, t]
        gate = _sig(-_softplus(af) * t_gap)
        dgate = dx * (g - hh)
        dg = dx * gate
        dhh = dx * (1.0 - gate)
        ds = dgate * gate * (1.0 - gate)
        daf = -t_gap * ds * _sig(af)
        dag = dg * (1.0 - g * g)
        dah = dhh * (1.0 - hh * hh)
        dWf[:, :N] += daf.T @ x
        dWf[:, N:] += daf.T @ u
        dbf += daf.sum(axis=0)
        dWg[:, :N] += dag.T @ x
        dWg[:, N:] += dag.T @ u
        dbg += dag.sum(axis=0)
        dWh[:, :N] += dah.T @ x
        dWh[:, N:] += dah.T @ u
        dbh += dah.sum(axis=0)
        dX[:, t] = daf @ Wf[:, N:] + dag @ Wg[:, N:] + dah @ Wh[:, N:]
        dx = daf @ Wf[:, :N] + dag @ Wg[:, :N] + dah @ Wh[:, :N]


# ---------------------------------------------------------------------------
# Dense liquid SSM: explicit Euler on  dx/dt = (A + u*diag(Bv)) x + Bv*u
# with a scalar drive u per step (held across substeps).
# ---------------------------------------------------------------------------

def ssm_forward(U, A, Bv, dt, substeps, XS):
    B, T = U.shape
    k = 0
    for t in range(T):
        u = U[:, t][:, None]
        for _ in range(substeps):
            x = XS[:, k]
            XS[:, k + 1] = x + dt * (x @ A.T + u * (Bv * x) + u * Bv)
            k += 1


def ssm_backward(U, XS, A, Bv, dt, substeps, dH, dA, dBv, dU):
    B, T = U.shape
    N = Bv.shape[0]
    dx = np.zeros((B, N))
    k = T * substeps
    for t in range(T - 1, -1, -1):
        dx = dx + dH[:, t]
        u = U[:, t][:, None]
        du = np.zeros(B)
        for _ in range(substeps):
            k -= 1
            x = XS[:, k]
            dA += dt * (dx.T @ x)
            dBv += dt * (dx * u * (x + 1.0)).sum(axis=0)
            du += dt * (dx * (Bv * (x + 1.0))).sum(axis=1)
            dx = dx + dt * (dx @ A + u * (Bv * dx))
        dU[:, t] = du
