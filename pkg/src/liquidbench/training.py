"""MSE loss, Adam, the BPTT training loop, and evaluation metrics."""

import time
from dataclasses import dataclass, field

import numpy as np

from .numerics import rng_new

#: rng stream id used for epoch shuffling (seed comes from TrainConfig)
SHUFFLE_STREAM = 3


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the epoch index where it happened."""

    def __init__(self, epoch, message="training diverged"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


def mse_loss(pred, target) -> float:
    """Mean squared error over all elements of two same-shaped arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    err = pred - target
    return float(np.mean(err * err))


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params),
                     lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(state: AdamState, params, grads):
    """Standard bias-corrected Adam step, applied to params in place.

    ``params`` may be a ParamVector or its flat float64 buffer.
    """
    theta = params if isinstance(params, np.ndarray) else params.data
    g = grads if isinstance(grads, np.ndarray) else grads.data
    if g.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError("parameter/gradient/moment layouts do not match")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient entries")
    state.t += 1
    state.m[:] = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v[:] = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    theta -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return theta, state


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    shuffle: bool = True
    clip_norm: float = 0.0  # 0 disables gradient clipping

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0")
        return self


@dataclass
class TrainHistory:
    """Per-epoch mean loss and wall seconds, plus the final parameters."""

    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    final_params: np.ndarray | None = None


def train_bptt(model, windows, cfg: TrainConfig) -> TrainHistory:
    """Minibatch BPTT training with Adam; deterministic per cfg.seed.

    ``windows`` is anything with ``inputs`` (S, w, F) and ``targets`` (S, O)
    arrays.  Epoch loss is the element-count weighted mean of batch losses,
    i.e. exactly the dataset mean.  Models whose evaluation solver differs
    from the training discretization (LTC with rk4/dopri5) record the
    solver-true loss while gradients come from the fixed-step surrogate.
    """
    cfg.validate()
    inputs = np.ascontiguousarray(windows.inputs, dtype=np.float64)
    targets = np.ascontiguousarray(windows.targets, dtype=np.float64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    rng = rng_new(cfg.seed, SHUFFLE_STREAM)
    adam = adam_init(model.params.size, lr=cfg.lr)
    adaptive_eval = getattr(model, "eval_differs_from_train", False)
    history = TrainHistory()
    order = np.arange(n)
    # per-sample squared-error sums, written at original sample indices so
    # the epoch loss does not depend on the shuffle order (with lr = 0 the
    # history is constant to the last bit)
    sample_sums = np.zeros(n)
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        if cfg.shuffle:
            rng.shuffle(order)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = inputs[idx], targets[idx]
            # same computation as graddiff.loss_and_grad, opened up so the
            # per-sample error sums are available for the canonical epoch
            # loss without a second forward pass
            pred, cache = model.forward(xb)
            err = pred - yb
            with np.errstate(over="ignore"):
                sums = np.sum(err * err, axis=1)
            if not np.all(np.isfinite(sums)):
                raise TrainingDivergedError(epoch)
            try:
                grad = model.backward(xb, cache, (2.0 / err.size) * err)
                mask = getattr(model, "mask", None)
                if mask is not None:
                    grad = grad * mask
                if adaptive_eval:
                    err = model.predict(xb) - yb
                    with np.errstate(over="ignore"):
                        sums = np.sum(err * err, axis=1)
                    if not np.all(np.isfinite(sums)):
                        raise TrainingDivergedError(epoch)
                sample_sums[idx] = sums
                if cfg.clip_norm > 0.0:
                    norm = float(np.sqrt(np.sum(grad * grad)))
                    if norm > cfg.clip_norm:
                        grad = grad * (cfg.clip_norm / norm)
                adam_update(adam, model.params.data, grad)
            except FloatingPointError as exc:
                raise TrainingDivergedError(epoch) from exc
        history.losses.append(float(sample_sums.sum()) / targets.size)
        history.seconds.append(time.perf_counter() - tic)
    history.final_params = model.params.data.copy()
    return history


@dataclass
class MetricsResult:
    mae: float
    rmse: float
    r2: float
    r2_excluded: tuple = ()  # feature indices with zero target variance


def compute_metrics(pred, target) -> MetricsResult:
    """MAE, RMSE and per-feature-averaged R^2 of a prediction matrix.

    R^2 per feature is 1 - SSE/SST about the target mean; features whose
    target variance is zero are excluded from the average and flagged.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim != 2 or pred.shape[0] < 2:
        raise ValueError("compute_metrics needs a (rows >= 2, features) "
                         "matrix")
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    sse = np.sum(err * err, axis=0)
    sst = np.sum((target - target.mean(axis=0)) ** 2, axis=0)
    # exact min == max constancy check; the mean of a constant column can
    # pick up rounding, leaving sst tiny but nonzero
    ok = target.max(axis=0) != target.min(axis=0)
    excluded = tuple(int(j) for j in np.nonzero(~ok)[0])
    if ok.any():
        r2 = float(np.mean(1.0 - sse[ok] / sst[ok]))
    else:
        r2 = float("nan")
    return MetricsResult(mae=mae, rmse=rmse, r2=r2, r2_excluded=excluded)
