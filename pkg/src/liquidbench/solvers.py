"""Generic ODE integrators: explicit Euler, classical RK4, Dormand-Prince 5(4).

All take a state-derivative callback ``rhs(x, t) -> dx`` over 1-D float64
state (callers may flatten batched state).  The adaptive integrator uses the
standard Dormand-Prince tableau with FSAL, a PI step-size controller
(safety 0.9, growth clamp [0.2, 5.0]) and error norm

    err = rms( (x5 - x4) / (atol + rtol * max(|x|, |x5|)) )

Step underflow is reported as stiffness instead of silently grinding on;
the LTC fused step is the sanctioned fallback for stiff dynamics.
"""

from dataclasses import dataclass

import math

import numpy as np

SOLVER_KINDS = ("euler", "rk4", "dopri5", "fused")


class StiffnessError(RuntimeError):
    """Adaptive step size collapsed; the problem is too stiff for dopri5."""


@dataclass
class SolverConfig:
    """How a continuous-time cell is advanced between input samples.

    Fixed-step kinds take ``substeps`` steps of length ``dt`` per sample;
    dopri5 integrates the same span substeps*dt adaptively under
    (rtol, atol).
    """

    kind: str = "fused"
    dt: float = 0.1
    substeps: int = 1
    rtol: float = 1e-3
    atol: float = 1e-6

    def validate(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind: {self.kind!r}")
        if self.dt <= 0:
            raise ValueError("solver dt must be > 0")
        if self.substeps < 1:
            raise ValueError("solver substeps must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be > 0")
        return self

    @property
    def span(self) -> float:
        """Virtual integration time per input sample."""
        return self.dt * self.substeps


def _check_finite(dx, what):
    if not np.all(np.isfinite(dx)):
        raise FloatingPointError(f"non-finite {what}")


def euler_step(rhs, x, t, dt):
    """x + dt * rhs(x, t)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dx = np.asarray(rhs(x, t), dtype=np.float64)
    _check_finite(dx, "rhs output in euler_step")
    return x + dt * dx


def rk4_step(rhs, x, t, dt):
    """Classical four-stage Runge-Kutta update."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = np.asarray(rhs(x, t), dtype=np.float64)
    k2 = np.asarray(rhs(x + 0.5 * dt * k1, t + 0.5 * dt), dtype=np.float64)
    k3 = np.asarray(rhs(x + 0.5 * dt * k2, t + 0.5 * dt), dtype=np.float64)
    k4 = np.asarray(rhs(x + dt * k3, t + dt), dtype=np.float64)
    _check_finite(k4, "rhs stage in rk4_step")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0),
)
_DP_B5 = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
          11.0 / 84.0, 0.0)
_DP_B4 = (5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0,
          -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0


def dopri5_integrate(rhs, x0, t0, t1, rtol=1e-3, atol=1e-6):
    """Integrate rhs from t0 to t1, returning the state at t1.

    Initial step is (t1 - t0)/100, except that a rest state (rhs(x0) == 0)
    is crossed in a single step.  Raises StiffnessError once the accepted
    step falls below 1e-12 * (t1 - t0).
    """
    if t1 <= t0:
        raise ValueError("dopri5_integrate needs t1 > t0")
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be > 0")
    x = np.array(x0, dtype=np.float64)
    t = float(t0)
    span = float(t1) - float(t0)
    k1 = np.asarray(rhs(x, t), dtype=np.float64)
    _check_finite(k1, "rhs output in dopri5")
    dt = span if not np.any(k1) else span / 100.0
    err_prev = 1.0
    ks = [None] * 7
    ks[0] = k1
    while t < t1:
        dt = min(dt, t1 - t)
        if dt < 1e-12 * span:
            raise StiffnessError(
                f"dopri5 step underflow at t={t:.6g} (dt={dt:.3e}); "
                "the dynamics look stiff -- use the fused solver")
        for i in range(1, 7):
            xi = x.copy()
            for j, a in enumerate(_DP_A[i]):
                if a != 0.0:
                    xi += (dt * a) * ks[j]
            ks[i] = np.asarray(rhs(xi, t + _DP_C[i] * dt), dtype=np.float64)
        x5 = x.copy()
        for j, b in enumerate(_DP_B5):
            if b != 0.0:
                x5 += (dt * b) * ks[j]
        ex = np.zeros_like(x)
        for j in range(7):
            db = _DP_B5[j] - _DP_B4[j]
            if db != 0.0:
                ex += (dt * db) * ks[j]
        _check_finite(x5, "state in dopri5")
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        err = math.sqrt(float(np.mean((ex / scale) ** 2)))
        if err <= 1.0:
            t = t + dt
            x = x5
            ks[0] = ks[6]  # FSAL
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-10)
            dt = dt * factor
        else:
            factor = max(_MIN_FACTOR, _SAFETY * err ** (-0.2))
            dt = dt * factor
    return x
