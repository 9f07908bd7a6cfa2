"""Benchmark the compiled kernel core against the pure-NumPy fallback.

Runs each cell family's forward+backward sequence kernels (and the RNG
fill) on both backends and reports per-call milliseconds plus speedup.
Invoked via ``liquidbench bench``.
"""

import time

import numpy as np

from . import _kernels_py

try:
    from . import _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None


def _time_call(fn, min_seconds=0.15):
    fn()  # warmup
    reps = 1
    while True:
        tic = time.perf_counter()
        for _ in range(reps):
            fn()
        elapsed = time.perf_counter() - tic
        if elapsed >= min_seconds:
            return elapsed / reps
        reps = max(reps + 1, int(reps * min_seconds / max(elapsed, 1e-9)))


def _cases(kern, B, T, M, N, substeps):
    rng = np.random.default_rng(0)

    def mk(*shape):
        return rng.standard_normal(shape) * 0.3

    cases = {}

    Wxh, Whh, bh = mk(N, M), mk(N, N), mk(N)
    X = mk(B, T, M)
    dH = mk(B, T, N)

    def rnn():
        H = np.zeros((B, T + 1, N))
        kern.rnn_forward(X, Wxh, Whh, bh, H)
        g = [np.zeros_like(Wxh), np.zeros_like(Whh), np.zeros_like(bh)]
        kern.rnn_backward(X, H, Wxh, Whh, dH, *g, np.zeros_like(X))
    cases["rnn"] = rnn

    Ws = [mk(N, N + M) for _ in range(4)]
    bs = [mk(N) for _ in range(4)]

    def lstm():
        H = np.zeros((B, T + 1, N))
        C = np.zeros((B, T + 1, N))
        caches = [np.zeros((B, T, N)) for _ in range(4)]
        kern.lstm_forward(X, *Ws, *bs, H, C, *caches)
        gw = [np.zeros_like(w) for w in Ws]
        gb = [np.zeros_like(b) for b in bs]
        kern.lstm_backward(X, H, C, *caches, *Ws, dH, *gw, *gb,
                           np.zeros_like(X))
    cases["lstm"] = lstm

    Wg3 = [mk(N, N + M) for _ in range(3)]
    bg3 = [mk(N) for _ in range(3)]

    def gru():
        H = np.zeros((B, T + 1, N))
        caches = [np.zeros((B, T, N)) for _ in range(3)]
        kern.gru_forward(X, *Wg3, *bg3, H, *caches)
        gw = [np.zeros_like(w) for w in Wg3]
        gb = [np.zeros_like(b) for b in bg3]
        kern.gru_backward(X, H, *caches, *Wg3, dH, *gw, *gb,
                          np.zeros_like(X))
    cases["gru"] = gru

    Wgx, Wgi, bgv = mk(N, N), mk(N, M), mk(N)
    tau = np.abs(mk(N)) + 0.5
    Av = mk(N)

    def ltc():
        XS = np.zeros((B, T * substeps + 1, N))
        G = np.zeros((B, T * substeps, N))
        kern.ltc_forward(X, Wgx, Wgi, bgv, tau, Av, 0.1, substeps, 1, XS, G)
        g = [np.zeros_like(Wgx), np.zeros_like(Wgi), np.zeros_like(bgv),
             np.zeros_like(tau), np.zeros_like(Av)]
        kern.ltc_backward(X, XS, G, Wgx, Wgi, tau, Av, 0.1, substeps, 1,
                          dH, *g, np.zeros_like(X))
    cases["ltc"] = ltc

    def cfc():
        XS = np.zeros((B, T + 1, N))
        caches = [np.zeros((B, T, N)) for _ in range(3)]
        kern.cfc_forward(X, Wg3[0], bg3[0], Wg3[1], bg3[1], Wg3[2], bg3[2],
                         1.0, XS, *caches)
        gw = [np.zeros_like(Wg3[0]) for _ in range(3)]
        gb = [np.zeros_like(bg3[0]) for _ in range(3)]
        kern.cfc_backward(X, XS, *caches, Wg3[0], Wg3[1], Wg3[2], 1.0, dH,
                          gw[0], gb[0], gw[1], gb[1], gw[2], gb[2],
                          np.zeros_like(X))
    cases["cfc"] = cfc

    Am, Bv, U = mk(N, N) * 0.1, mk(N), mk(B, T)

    def ssm():
        XS = np.zeros((B, T * substeps + 1, N))
        kern.ssm_forward(U, Am, Bv, 0.05, substeps, XS)
        kern.ssm_backward(U, XS, Am, Bv, 0.05, substeps, dH,
                          np.zeros_like(Am), np.zeros_like(Bv),
                          np.zeros_like(U))
    cases["ssm"] = ssm

    def rng_fill():
        state = np.zeros(4, dtype=np.uint64)
        kern.rng_seed(state, 42, 0)
        kern.rng_fill_normal(state, np.zeros(2), np.empty(20000))
    cases["rng_normal_20k"] = rng_fill

    return cases


def run_bench(batch=32, steps=10, features=8, hidden=64, substeps=5,
              min_seconds=0.15, out=print):
    """Time forward+backward per family on both backends; returns rows."""
    out(f"kernel benchmark: B={batch} T={steps} M={features} N={hidden} "
        f"substeps={substeps}")
    backends = [("pure", _kernels_py)]
    if _kernels_cy is not None:
        backends.append(("compiled", _kernels_cy))
    else:
        out("compiled extension not available; timing the fallback only")
    timings = {}
    for name, kern in backends:
        for case, fn in _cases(kern, batch, steps, features, hidden,
                               substeps).items():
            timings[(name, case)] = _time_call(fn, min_seconds)
    rows = []
    out(f"{'kernel':<16}{'pure ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for case in _cases(_kernels_py, 1, 1, 1, 1, 1):
        pure_ms = timings[("pure", case)] * 1e3
        if _kernels_cy is not None:
            comp_ms = timings[("compiled", case)] * 1e3
            speedup = pure_ms / comp_ms
            out(f"{case:<16}{pure_ms:>12.3f}{comp_ms:>14.3f}"
                f"{speedup:>9.1f}x")
            rows.append({"kernel": case, "pure_ms": pure_ms,
                         "compiled_ms": comp_ms, "speedup": speedup})
        else:
            out(f"{case:<16}{pure_ms:>12.3f}{'-':>14}{'-':>10}")
            rows.append({"kernel": case, "pure_ms": pure_ms})
    return rows
