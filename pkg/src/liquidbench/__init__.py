"""liquidbench: discrete and liquid recurrent cells under one benchmark roof.

Implements RNN/LSTM/GRU step dynamics, liquid time-constant (LTC) cells with
fused and explicit solvers, closed-form continuous-time (CfC) cells, a dense
liquid state-space cell, and sparse four-layer NCP wiring -- plus ODE
integrators, hand-derived BPTT gradients checked against finite differences,
Adam training, synthetic/CSV sequence tasks, and a deterministic experiment
harness with a CLI.
"""

__version__ = "0.1.0"

from ._backend import BACKEND_NAME, HAS_COMPILED
