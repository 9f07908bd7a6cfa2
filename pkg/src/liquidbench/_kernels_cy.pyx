# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core.

Mirrors ``liquidbench._kernels_py`` function for function; see that module
for the shared conventions (state layouts, cache semantics, dH meaning).
The RNG integer stream is bit-identical to the fallback; float kernels agree
to rounding (plain loop summation here instead of BLAS).
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport uint64_t
from libc.math cimport exp, log1p, sqrt, cos, sin, tanh

cnp.import_array()

cdef double U53 = 1.0 / 9007199254740992.0  # 2^-53
cdef double TWO_PI = 6.283185307179586476925286766559


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------

cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _splitmix64_next(uint64_t* s) nogil:
    cdef uint64_t z
    s[0] = s[0] + <uint64_t>0x9E3779B97F4A7C15
    z = s[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


def rng_seed(uint64_t[::1] state, seed, stream_id):
    cdef uint64_t s = (<uint64_t>(int(seed) & ((1 << 64) - 1))) ^ \
                      (<uint64_t>(int(stream_id) & ((1 << 64) - 1)))
    cdef int i
    for i in range(4):
        state[i] = _splitmix64_next(&s)


cdef inline uint64_t _xoshiro_next(uint64_t[::1] state) nogil:
    cdef uint64_t s0 = state[0]
    cdef uint64_t s1 = state[1]
    cdef uint64_t s2 = state[2]
    cdef uint64_t s3 = state[3]
    cdef uint64_t result = _rotl(s1 * <uint64_t>5, 7) * <uint64_t>9
    cdef uint64_t t = s1 << 17
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


def rng_next(uint64_t[::1] state):
    return _xoshiro_next(state)


def rng_fill_uniform(uint64_t[::1] state, double[::1] out):
    cdef Py_ssize_t i, n = out.shape[0]
    for i in range(n):
        out[i] = <double>(_xoshiro_next(state) >> 11) * U53


def rng_fill_normal(uint64_t[::1] state, double[::1] cache, double[::1] out):
    cdef Py_ssize_t i = 0, n = out.shape[0]
    cdef double u1, u2, r, theta, z1
    if n > 0 and cache[1] != 0.0:
        out[0] = cache[0]
        cache[1] = 0.0
        i = 1
    while i < n:
        u1 = <double>(_xoshiro_next(state) >> 11) * U53
        u2 = <double>(_xoshiro_next(state) >> 11) * U53
        r = sqrt(-2.0 * log1p(-u1))
        theta = TWO_PI * u2
        out[i] = r * cos(theta)
        i += 1
        z1 = r * sin(theta)
        if i < n:
            out[i] = z1
            i += 1
        else:
            cache[0] = z1
            cache[1] = 1.0


# ---------------------------------------------------------------------------
# Elementwise helpers
# ---------------------------------------------------------------------------

cdef inline double c_sig(double a) nogil:
    cdef double ea
    if a >= 0.0:
        return 1.0 / (1.0 + exp(-a))
    ea = exp(a)
    return ea / (1.0 + ea)


cdef inline double c_softplus(double a) nogil:
    if a >= 0.0:
        return a + log1p(exp(-a))
    return log1p(exp(a))


# ---------------------------------------------------------------------------
# Standard RNN
# ---------------------------------------------------------------------------

def rnn_forward(double[:, :, ::1] X, double[:, ::1] Wxh, double[:, ::1] Whh,
                double[::1] bh, double[:, :, ::1] H):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Whh.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double acc
    with nogil:
        for t in range(T):
            for b in range(B):
                for n in range(N):
                    acc = bh[n]
                    for j in range(N):
                        acc += Whh[n, j] * H[b, t, j]
                    for j in range(M):
                        acc += Wxh[n, j] * X[b, t, j]
                    H[b, t + 1, n] = tanh(acc)


def rnn_backward(double[:, :, ::1] X, double[:, :, ::1] H,
                 double[:, ::1] Wxh, double[:, ::1] Whh,
                 double[:, :, ::1] dH, double[:, ::1] dWxh,
                 double[:, ::1] dWhh, double[::1] dbh,
                 double[:, :, ::1] dX):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Whh.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double d, h, acc
    dh_arr = np.zeros((B, N))
    da_arr = np.zeros((B, N))
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] da = da_arr
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for n in range(N):
                    d = dh[b, n] + dH[b, t, n]
                    h = H[b, t + 1, n]
                    da[b, n] = d * (1.0 - h * h)
            for b in range(B):
                for n in range(N):
                    d = da[b, n]
                    dbh[n] += d
                    for j in range(N):
                        dWhh[n, j] += d * H[b, t, j]
                    for j in range(M):
                        dWxh[n, j] += d * X[b, t, j]
            for b in range(B):
                for j in range(M):
                    acc = 0.0
                    for n in range(N):
                        acc += da[b, n] * Wxh[n, j]
                    dX[b, t, j] = acc
                for j in range(N):
                    acc = 0.0
                    for n in range(N):
                        acc += da[b, n] * Whh[n, j]
                    dh[b, j] = acc


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def lstm_forward(double[:, :, ::1] X,
                 double[:, ::1] Wf, double[:, ::1] Wi,
                 double[:, ::1] Wc, double[:, ::1] Wo,
                 double[::1] bf, double[::1] bi,
                 double[::1] bc, double[::1] bo,
                 double[:, :, ::1] H, double[:, :, ::1] C,
                 double[:, :, ::1] GF, double[:, :, ::1] GI,
                 double[:, :, ::1] GC, double[:, :, ::1] GO):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Wf.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double af, ai, ac, ao, h, x, f, i_, cc, o, cn
    with nogil:
        for t in range(T):
            for b in range(B):
                for n in range(N):
                    af = bf[n]; ai = bi[n]; ac = bc[n]; ao = bo[n]
                    for j in range(N):
                        h = H[b, t, j]
                        af += Wf[n, j] * h
                        ai += Wi[n, j] * h
                        ac += Wc[n, j] * h
                        ao += Wo[n, j] * h
                    for j in range(M):
                        x = X[b, t, j]
                        af += Wf[n, N + j] * x
                        ai += Wi[n, N + j] * x
                        ac += Wc[n, N + j] * x
                        ao += Wo[n, N + j] * x
                    f = c_sig(af)
                    i_ = c_sig(ai)
                    cc = tanh(ac)
                    o = c_sig(ao)
                    cn = f * C[b, t, n] + i_ * cc
                    C[b, t + 1, n] = cn
                    H[b, t + 1, n] = o * tanh(cn)
                    GF[b, t, n] = f
                    GI[b, t, n] = i_
                    GC[b, t, n] = cc
                    GO[b, t, n] = o


def lstm_backward(double[:, :, ::1] X, double[:, :, ::1] H,
                  double[:, :, ::1] C,
                  double[:, :, ::1] GF, double[:, :, ::1] GI,
                  double[:, :, ::1] GC, double[:, :, ::1] GO,
                  double[:, ::1] Wf, double[:, ::1] Wi,
                  double[:, ::1] Wc, double[:, ::1] Wo,
                  double[:, :, ::1] dH,
                  double[:, ::1] dWf, double[:, ::1] dWi,
                  double[:, ::1] dWc, double[:, ::1] dWo,
                  double[::1] dbf, double[::1] dbi,
                  double[::1] dbc, double[::1] dbo,
                  double[:, :, ::1] dX):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Wf.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double d, f, i_, cc, o, tc, do_, dcv, df, di, dcc, h, x, acc
    dh_arr = np.zeros((B, N))
    dc_arr = np.zeros((B, N))
    daf_arr = np.zeros((B, N))
    dai_arr = np.zeros((B, N))
    dac_arr = np.zeros((B, N))
    dao_arr = np.zeros((B, N))
    cdef double[:, ::1] dh = dh_arr, dc = dc_arr
    cdef double[:, ::1] daf = daf_arr, dai = dai_arr
    cdef double[:, ::1] dac = dac_arr, dao = dao_arr
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for n in range(N):
                    d = dh[b, n] + dH[b, t, n]
                    f = GF[b, t, n]
                    i_ = GI[b, t, n]
                    cc = GC[b, t, n]
                    o = GO[b, t, n]
                    tc = tanh(C[b, t + 1, n])
                    do_ = d * tc
                    dcv = dc[b, n] + d * o * (1.0 - tc * tc)
                    df = dcv * C[b, t, n]
                    di = dcv * cc
                    dcc = dcv * i_
                    dc[b, n] = dcv * f
                    daf[b, n] = df * f * (1.0 - f)
                    dai[b, n] = di * i_ * (1.0 - i_)
                    dac[b, n] = dcc * (1.0 - cc * cc)
                    dao[b, n] = do_ * o * (1.0 - o)
            for b in range(B):
                for n in range(N):
                    dbf[n] += daf[b, n]
                    dbi[n] += dai[b, n]
                    dbc[n] += dac[b, n]
                    dbo[n] += dao[b, n]
                    for j in range(N):
                        h = H[b, t, j]
                        dWf[n, j] += daf[b, n] * h
                        dWi[n, j] += dai[b, n] * h
                        dWc[n, j] += dac[b, n] * h
                        dWo[n, j] += dao[b, n] * h
                    for j in range(M):
                        x = X[b, t, j]
                        dWf[n, N + j] += daf[b, n] * x
                        dWi[n, N + j] += dai[b, n] * x
                        dWc[n, N + j] += dac[b, n] * x
                        dWo[n, N + j] += dao[b, n] * x
            for b in range(B):
                for j in range(M):
                    acc = 0.0
                    for n in range(N):
                        acc += (daf[b, n] * Wf[n, N + j] +
                                dai[b, n] * Wi[n, N + j] +
                                dac[b, n] * Wc[n, N + j] +
                                dao[b, n] * Wo[n, N + j])
                    dX[b, t, j] = acc
                for j in range(N):
                    acc = 0.0
                    for n in range(N):
                        acc += (daf[b, n] * Wf[n, j] +
                                dai[b, n] * Wi[n, j] +
                                dac[b, n] * Wc[n, j] +
                                dao[b, n] * Wo[n, j])
                    dh[b, j] = acc


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def gru_forward(double[:, :, ::1] X,
                double[:, ::1] Wr, double[:, ::1] Wz, double[:, ::1] Wh,
                double[::1] br, double[::1] bz, double[::1] bh,
                double[:, :, ::1] H, double[:, :, ::1] GR,
                double[:, :, ::1] GZ, double[:, :, ::1] GC):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Wr.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double ar, az, ah, h, x, r, z, c
    with nogil:
        for t in range(T):
            for b in range(B):
                for n in range(N):
                    ar = br[n]; az = bz[n]
                    for j in range(N):
                        h = H[b, t, j]
                        ar += Wr[n, j] * h
                        az += Wz[n, j] * h
                    for j in range(M):
                        x = X[b, t, j]
                        ar += Wr[n, N + j] * x
                        az += Wz[n, N + j] * x
                    GR[b, t, n] = c_sig(ar)
                    GZ[b, t, n] = c_sig(az)
                for n in range(N):
                    ah = bh[n]
                    for j in range(N):
                        ah += Wh[n, j] * (GR[b, t, j] * H[b, t, j])
                    for j in range(M):
                        ah += Wh[n, N + j] * X[b, t, j]
                    c = tanh(ah)
                    z = GZ[b, t, n]
                    H[b, t + 1, n] = (1.0 - z) * H[b, t, n] + z * c
                    GC[b, t, n] = c


def gru_backward(double[:, :, ::1] X, double[:, :, ::1] H,
                 double[:, :, ::1] GR, double[:, :, ::1] GZ,
                 double[:, :, ::1] GC,
                 double[:, ::1] Wr, double[:, ::1] Wz, double[:, ::1] Wh,
                 double[:, :, ::1] dH,
                 double[:, ::1] dWr, double[:, ::1] dWz, double[:, ::1] dWh,
                 double[::1] dbr, double[::1] dbz, double[::1] dbh,
                 double[:, :, ::1] dX):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Wr.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double d, r, z, c, hp, x, dz, dcv, drh_v, dr, acc
    dh_arr = np.zeros((B, N))
    dhp_arr = np.zeros((B, N))
    dar_arr = np.zeros((B, N))
    daz_arr = np.zeros((B, N))
    dacv_arr = np.zeros((B, N))
    drh_arr = np.zeros((B, N))
    cdef double[:, ::1] dh = dh_arr, dhp = dhp_arr
    cdef double[:, ::1] dar = dar_arr, daz = daz_arr
    cdef double[:, ::1] dac = dacv_arr, drh = drh_arr
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for n in range(N):
                    d = dh[b, n] + dH[b, t, n]
                    r = GR[b, t, n]
                    z = GZ[b, t, n]
                    c = GC[b, t, n]
                    hp = H[b, t, n]
                    dz = d * (c - hp)
                    dcv = d * z
                    dhp[b, n] = d * (1.0 - z)
                    dac[b, n] = dcv * (1.0 - c * c)
                    daz[b, n] = dz * z * (1.0 - z)
                for j in range(N):
                    acc = 0.0
                    for n in range(N):
                        acc += dac[b, n] * Wh[n, j]
                    drh[b, j] = acc
                for n in range(N):
                    r = GR[b, t, n]
                    hp = H[b, t, n]
                    drh_v = drh[b, n]
                    dr = drh_v * hp
                    dhp[b, n] += drh_v * r
                    dar[b, n] = dr * r * (1.0 - r)
            for b in range(B):
                for n in range(N):
                    dbr[n] += dar[b, n]
                    dbz[n] += daz[b, n]
                    dbh[n] += dac[b, n]
                    for j in range(N):
                        hp = H[b, t, j]
                        dWr[n, j] += dar[b, n] * hp
                        dWz[n, j] += daz[b, n] * hp
                        dWh[n, j] += dac[b, n] * (GR[b, t, j] * hp)
                    for j in range(M):
                        x = X[b, t, j]
                        dWr[n, N + j] += dar[b, n] * x
                        dWz[n, N + j] += daz[b, n] * x
                        dWh[n, N + j] += dac[b, n] * x
            for b in range(B):
                for j in range(M):
                    acc = 0.0
                    for n in range(N):
                        acc += (dac[b, n] * Wh[n, N + j] +
                                dar[b, n] * Wr[n, N + j] +
                                daz[b, n] * Wz[n, N + j])
                    dX[b, t, j] = acc
                for j in range(N):
                    acc = dhp[b, j]
                    for n in range(N):
                        acc += dar[b, n] * Wr[n, j] + daz[b, n] * Wz[n, j]
                    dh[b, j] = acc


# ---------------------------------------------------------------------------
# LTC (see _kernels_py for the update formulas)
# ---------------------------------------------------------------------------

def ltc_forward(double[:, :, ::1] X, double[:, ::1] Wgx, double[:, ::1] Wgi,
                double[::1] bg, double[::1] tau, double[::1] A,
                double dt, int substeps, int fused,
                double[:, :, ::1] XS, double[:, :, ::1] G):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = tau.shape[0]
    cdef Py_ssize_t t, b, n, j, s, k
    cdef double acc, g, x
    ui_arr = np.zeros((B, N))
    cdef double[:, ::1] ui = ui_arr
    with nogil:
        k = 0
        for t in range(T):
            for b in range(B):
                for n in range(N):
                    acc = bg[n]
                    for j in range(M):
                        acc += Wgi[n, j] * X[b, t, j]
                    ui[b, n] = acc
            for s in range(substeps):
                for b in range(B):
                    for n in range(N):
                        acc = ui[b, n]
                        for j in range(N):
                            acc += Wgx[n, j] * XS[b, k, j]
                        g = c_sig(acc)
                        x = XS[b, k, n]
                        if fused:
                            XS[b, k + 1, n] = (x + dt * g * A[n]) / \
                                (1.0 + dt * (1.0 / tau[n] + g))
                        else:
                            XS[b, k + 1, n] = x + dt * \
                                (-(1.0 / tau[n] + g) * x + g * A[n])
                        G[b, k, n] = g
                k += 1


def ltc_backward(double[:, :, ::1] X, double[:, :, ::1] XS,
                 double[:, :, ::1] G,
                 double[:, ::1] Wgx, double[:, ::1] Wgi,
                 double[::1] tau, double[::1] A,
                 double dt, int substeps, int fused,
                 double[:, :, ::1] dH,
                 double[:, ::1] dWgx, double[:, ::1] dWgi, double[::1] dbg,
                 double[::1] dtau, double[::1] dA, double[:, :, ::1] dX):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = tau.shape[0]
    cdef Py_ssize_t t, b, n, j, s, k
    cdef double d, x, g, xn, D, dgate, acc
    dx_arr = np.zeros((B, N))
    da_arr = np.zeros((B, N))
    du_arr = np.zeros((B, M))
    cdef double[:, ::1] dxv = dx_arr, da = da_arr, du = du_arr
    with nogil:
        k = T * substeps
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for n in range(N):
                    dxv[b, n] += dH[b, t, n]
                for j in range(M):
                    du[b, j] = 0.0
            for s in range(substeps):
                k -= 1
                for b in range(B):
                    for n in range(N):
                        d = dxv[b, n]
                        x = XS[b, k, n]
                        g = G[b, k, n]
                        if fused:
                            xn = XS[b, k + 1, n]
                            D = 1.0 + dt * (1.0 / tau[n] + g)
                            dgate = d * dt * (A[n] - xn) / D
                            dA[n] += d * dt * g / D
                            dtau[n] += d * xn * dt / (D * tau[n] * tau[n])
                            dxv[b, n] = d / D
                        else:
                            dgate = d * dt * (A[n] - x)
                            dA[n] += d * dt * g
                            dtau[n] += d * dt * x / (tau[n] * tau[n])
                            dxv[b, n] = d * (1.0 - dt * (1.0 / tau[n] + g))
                        da[b, n] = dgate * g * (1.0 - g)
                for b in range(B):
                    for n in range(N):
                        d = da[b, n]
                        dbg[n] += d
                        for j in range(N):
                            dWgx[n, j] += d * XS[b, k, j]
                        for j in range(M):
                            dWgi[n, j] += d * X[b, t, j]
                    for j in range(M):
                        acc = 0.0
                        for n in range(N):
                            acc += da[b, n] * Wgi[n, j]
                        du[b, j] += acc
                    for j in range(N):
                        acc = 0.0
                        for n in range(N):
                            acc += da[b, n] * Wgx[n, j]
                        dxv[b, j] += acc
            for b in range(B):
                for j in range(M):
                    dX[b, t, j] = du[b, j]


# ---------------------------------------------------------------------------
# CfC
# ---------------------------------------------------------------------------

def cfc_forward(double[:, :, ::1] X,
                double[:, ::1] Wf, double[::1] bf,
                double[:, ::1] Wg, double[::1] bg,
                double[:, ::1] Wh, double[::1] bh,
                double t_gap, double[:, :, ::1] XS,
                double[:, :, ::1] AF, double[:, :, ::1] G,
                double[:, :, ::1] Hh):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Wf.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double af, ag, ah, x, u, g, hh, gate
    with nogil:
        for t in range(T):
            for b in range(B):
                for n in range(N):
                    af = bf[n]; ag = bg[n]; ah = bh[n]
                    for j in range(N):
                        x = XS[b, t, j]
                        af += Wf[n, j] * x
                        ag += Wg[n, j] * x
                        ah += Wh[n, j] * x
                    for j in range(M):
                        u = X[b, t, j]
                        af += Wf[n, N + j] * u
                        ag += Wg[n, N + j] * u
                        ah += Wh[n, N + j] * u
                    g = tanh(ag)
                    hh = tanh(ah)
                    gate = c_sig(-c_softplus(af) * t_gap)
                    XS[b, t + 1, n] = gate * g + (1.0 - gate) * hh
                    AF[b, t, n] = af
                    G[b, t, n] = g
                    Hh[b, t, n] = hh


def cfc_backward(double[:, :, ::1] X, double[:, :, ::1] XS,
                 double[:, :, ::1] AF, double[:, :, ::1] G,
                 double[:, :, ::1] Hh,
                 double[:, ::1] Wf, double[:, ::1] Wg, double[:, ::1] Wh,
                 double t_gap, double[:, :, ::1] dH,
                 double[:, ::1] dWf, double[::1] dbf,
                 double[:, ::1] dWg, double[::1] dbg,
                 double[:, ::1] dWh, double[::1] dbh,
                 double[:, :, ::1] dX):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], M = X.shape[2]
    cdef Py_ssize_t N = Wf.shape[0]
    cdef Py_ssize_t t, b, n, j
    cdef double d, af, g, hh, gate, dgate, dg, dhh, ds, x, u, acc
    dx_arr = np.zeros((B, N))
    daf_arr = np.zeros((B, N))
    dag_arr = np.zeros((B, N))
    dah_arr = np.zeros((B, N))
    cdef double[:, ::1] dxv = dx_arr
    cdef double[:, ::1] daf = daf_arr, dag = dag_arr, dah = dah_arr
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for n in range(N):
                    d = dxv[b, n] + dH[b, t, n]
                    af = AF[b, t, n]
                    g = G[b, t, n]
                    hh = Hh[b, t, n]
                    gate = c_sig(-c_softplus(af) * t_gap)
                    dgate = d * (g - hh)
                    dg = d * gate
                    dhh = d * (1.0 - gate)
                    ds = dgate * gate * (1.0 - gate)
                    daf[b, n] = -t_gap * ds * c_sig(af)
                    dag[b, n] = dg * (1.0 - g * g)
                    dah[b, n] = dhh * (1.0 - hh * hh)
            for b in range(B):
                for n in range(N):
                    dbf[n] += daf[b, n]
                    dbg[n] += dag[b, n]
                    dbh[n] += dah[b, n]
                    for j in range(N):
                        x = XS[b, t, j]
                        dWf[n, j] += daf[b, n] * x
                        dWg[n, j] += dag[b, n] * x
                        dWh[n, j] += dah[b, n] * x
                    for j in range(M):
                        u = X[b, t, j]
                        dWf[n, N + j] += daf[b, n] * u
                        dWg[n, N + j] += dag[b, n] * u
                        dWh[n, N + j] += dah[b, n] * u
            for b in range(B):
                for j in range(M):
                    acc = 0.0
                    for n in range(N):
                        acc += (daf[b, n] * Wf[n, N + j] +
                                dag[b, n] * Wg[n, N + j] +
                                dah[b, n] * Wh[n, N + j])
                    dX[b, t, j] = acc
                for j in range(N):
                    acc = 0.0
                    for n in range(N):
                        acc += (daf[b, n] * Wf[n, j] +
                                dag[b, n] * Wg[n, j] +
                                dah[b, n] * Wh[n, j])
                    dxv[b, j] = acc


# ---------------------------------------------------------------------------
# Dense liquid SSM
# ---------------------------------------------------------------------------

def ssm_forward(double[:, ::1] U, double[:, ::1] A, double[::1] Bv,
                double dt, int substeps, double[:, :, ::1] XS):
    cdef Py_ssize_t B = U.shape[0], T = U.shape[1]
    cdef Py_ssize_t N = Bv.shape[0]
    cdef Py_ssize_t t, b, n, j, s, k
    cdef double acc, x, u
    with nogil:
        k = 0
        for t in range(T):
            for s in range(substeps):
                for b in range(B):
                    u = U[b, t]
                    for n in range(N):
                        acc = 0.0
                        for j in range(N):
                            acc += A[n, j] * XS[b, k, j]
                        x = XS[b, k, n]
                        XS[b, k + 1, n] = x + dt * \
                            (acc + u * Bv[n] * x + u * Bv[n])
                k += 1


def ssm_backward(double[:, ::1] U, double[:, :, ::1] XS,
                 double[:, ::1] A, double[::1] Bv,
                 double dt, int substeps, double[:, :, ::1] dH,
                 double[:, ::1] dA, double[::1] dBv, double[:, ::1] dU):
    cdef Py_ssize_t B = U.shape[0], T = U.shape[1]
    cdef Py_ssize_t N = Bv.shape[0]
    cdef Py_ssize_t t, b, n, j, s, k
    cdef double d, x, u, acc, du_acc
    dx_arr = np.zeros((B, N))
    dxn_arr = np.zeros((B, N))
    cdef double[:, ::1] dxv = dx_arr, dxn = dxn_arr
    with nogil:
        k = T * substeps
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for n in range(N):
                    dxv[b, n] += dH[b, t, n]
                dU[b, t] = 0.0
            for s in range(substeps):
                k -= 1
                for b in range(B):
                    u = U[b, t]
                    du_acc = 0.0
                    for n in range(N):
                        d = dxv[b, n]
                        x = XS[b, k, n]
                        dBv[n] += dt * d * u * (x + 1.0)
                        du_acc += dt * d * Bv[n] * (x + 1.0)
                        for j in range(N):
                            dA[n, j] += dt * d * XS[b, k, j]
                    dU[b, t] += du_acc
                    for j in range(N):
                        acc = dxv[b, j] + dt * u * Bv[j] * dxv[b, j]
                        for n in range(N):
                            acc += dt * dxv[b, n] * A[n, j]
                        dxn[b, j] = acc
                    for j in range(N):
                        dxv[b, j] = dxn[b, j]
