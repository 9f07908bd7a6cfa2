import numpy as np
import pytest

from liquidbench.graddiff import Batch
from liquidbench.models import build_model
from liquidbench.numerics import rng_new
from liquidbench.solvers import SolverConfig

# solver configs used whenever a family needs one in tests
FAMILY_SOLVERS = {
    "ltc": SolverConfig(kind="fused", dt=0.1, substeps=3),
    "ssm": SolverConfig(kind="euler", dt=0.1, substeps=2),
}


def small_model(family, seed=0, input_dim=3, output_dim=2, hidden=5,
                layers=1, **kwargs):
    kw = dict(kwargs)
    if family in FAMILY_SOLVERS and "solver" not in kw:
        kw["solver"] = FAMILY_SOLVERS[family]
    return build_model(family, input_dim, output_dim, hidden, layers=layers,
                       rng=rng_new(seed, 2), **kw)


def random_batch(seed, batch=4, steps=8, features=3, outputs=2, scale=1.0):
    d = rng_new(seed, 9)
    inputs = scale * d.normals(batch * steps * features).reshape(
        batch, steps, features)
    targets = scale * d.normals(batch * outputs).reshape(batch, outputs)
    return Batch(inputs, targets)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)
