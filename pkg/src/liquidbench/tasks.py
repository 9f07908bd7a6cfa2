"""Sequence tasks: generation, ingestion, preprocessing, windowing, rollouts.

Datasets are (N sequences, T steps, F features) float64 blocks with feature
names and an exogenous mask; exogenous features (interventions, actions)
condition the dynamics but are never prediction targets.  Missing values are
NaN until ``preprocess`` resolves them.  All randomness flows through
explicit RngState streams, so a seed reproduces a cohort exactly.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .numerics import RngState

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@dataclass
class SequenceDataset:
    sequences: np.ndarray          # (N, T, F)
    feature_names: tuple
    exo_mask: np.ndarray           # (F,) bool; True = exogenous input
    dt: float = 1.0
    ids: tuple = ()

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float64)
        if self.sequences.ndim != 3:
            raise ValueError("sequences must be (N, T, F)")
        self.exo_mask = np.asarray(self.exo_mask, dtype=bool)
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != self.sequences.shape[2]:
            raise ValueError("feature_names length != feature count")
        if self.exo_mask.shape != (self.sequences.shape[2],):
            raise ValueError("exo_mask length != feature count")
        if not self.ids:
            self.ids = tuple(f"seq{i:04d}"
                             for i in range(self.sequences.shape[0]))
        self.ids = tuple(str(i) for i in self.ids)
        if len(self.ids) != self.sequences.shape[0]:
            raise ValueError("ids length != sequence count")

    @property
    def n_sequences(self):
        return self.sequences.shape[0]

    @property
    def n_steps(self):
        return self.sequences.shape[1]

    @property
    def n_features(self):
        return self.sequences.shape[2]

    @property
    def endo_indices(self):
        return tuple(int(j) for j in np.nonzero(~self.exo_mask)[0])

    def subset(self, indices):
        return replace(self, sequences=self.sequences[list(indices)].copy(),
                       ids=tuple(self.ids[i] for i in indices))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_damped_sine(rng: RngState, n_sequences, T, dt=0.1, lam=0.05,
                    omega=1.0, phase_jitter=1.5) -> SequenceDataset:
    """Damped sine waves y(t) = exp(-lam t) sin(omega t + phi).

    One feature; the phase phi is drawn uniformly in +-phase_jitter per
    sequence.  |y| never exceeds the exp(-lam t) envelope.
    """
    if lam < 0 or omega <= 0:
        raise ValueError("need lam >= 0 and omega > 0")
    t = np.arange(T) * dt
    seqs = np.empty((n_sequences, T, 1))
    for i in range(n_sequences):
        phi = (2.0 * rng.uniform() - 1.0) * phase_jitter
        seqs[i, :, 0] = np.exp(-lam * t) * np.sin(omega * t + phi)
    return SequenceDataset(seqs, ("y",), np.array([False]), dt=dt)


def gen_synthetic_icu(rng: RngState, n_patients, T, n_vitals=18,
                      n_interventions=3, intervention_rate=0.08,
                      intervention_stop_rate=0.25) -> SequenceDataset:
    """Synthetic ICU-style cohort: coupled mean-reverting vitals plus
    exogenous on/off intervention pulses that shift selected equilibria.

    A stand-in for credentialed clinical data; the structure (mean
    reversion, intervention-shifted set points, 12-hour bins) mirrors the
    modeling premise, not any real cohort.  Deterministic per rng stream.
    """
    if n_patients < 1 or T < 1 or n_vitals < 1 or n_interventions < 0:
        raise ValueError("counts must be positive (interventions >= 0)")
    nv, ni = n_vitals, n_interventions
    mu = 40.0 + 120.0 * rng.uniforms(nv)
    theta = 0.15 + 0.20 * rng.uniforms(nv)
    # innovation kept small against the intervention-driven range, so the
    # noise floor of a well-fit one-step predictor sits well below the
    # robustness-sweep perturbations
    eta = 0.3 + 0.7 * rng.uniforms(nv)
    coup_gate = rng.uniforms(nv * nv).reshape(nv, nv)
    coup_val = (2.0 * rng.uniforms(nv * nv).reshape(nv, nv) - 1.0) * 0.05
    coupling = np.where(coup_gate < 0.15, coup_val, 0.0)
    np.fill_diagonal(coupling, 0.0)
    if ni > 0:
        shift_gate = rng.uniforms(nv * ni).reshape(nv, ni)
        shift_sign = np.where(rng.uniforms(nv * ni).reshape(nv, ni) < 0.5,
                              -1.0, 1.0)
        shift_mag = 5.0 + 15.0 * rng.uniforms(nv * ni).reshape(nv, ni)
        shifts = np.where(shift_gate < 0.25, shift_sign * shift_mag, 0.0)
    else:
        shifts = np.zeros((nv, 0))
    seqs = np.empty((n_patients, T, nv + ni))
    for p in range(n_patients):
        x = mu + 2.0 * eta * rng.normals(nv)
        active = np.zeros(ni)
        for t in range(T):
            if ni > 0:
                toggles = rng.uniforms(ni)
                for j in range(ni):
                    if active[j] == 0.0:
                        if toggles[j] < intervention_rate:
                            active[j] = 1.0
                    elif toggles[j] < intervention_stop_rate:
                        active[j] = 0.0
            seqs[p, t, :nv] = x
            seqs[p, t, nv:] = active
            mu_eff = mu + shifts @ active if ni > 0 else mu
            x = (x + theta * (mu_eff - x) + coupling @ (x - mu) +
                 eta * rng.normals(nv))
    names = tuple(f"vital_{k:02d}" for k in range(nv)) + \
        tuple(f"intervention_{j}" for j in range(ni))
    exo = np.array([False] * nv + [True] * ni)
    return SequenceDataset(seqs, names, exo, dt=12.0,
                           ids=tuple(f"patient{p:04d}"
                                     for p in range(n_patients)))


def add_gaussian_noise(rng: RngState, ds: SequenceDataset, sigma,
                       relative_to="amplitude",
                       include_exogenous=False) -> SequenceDataset:
    """Additive zero-mean Gaussian noise, scale set per feature.

    relative_to='amplitude': std = sigma * (max-min)/2 of the feature;
    relative_to='normalized_range': std = sigma * (max-min), so on min-max
    normalized data the std is sigma itself.  sigma=0 returns a bitwise
    copy without consuming any draws.  Exogenous features stay clean unless
    include_exogenous is set.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if relative_to not in ("amplitude", "normalized_range"):
        raise ValueError(f"unknown noise mode: {relative_to!r}")
    seqs = ds.sequences.copy()
    if sigma == 0.0:
        return replace(ds, sequences=seqs)
    lo = np.nanmin(ds.sequences, axis=(0, 1))
    hi = np.nanmax(ds.sequences, axis=(0, 1))
    span = hi - lo
    scale = sigma * (span / 2.0 if relative_to == "amplitude" else span)
    cols = np.arange(ds.n_features) if include_exogenous \
        else np.nonzero(~ds.exo_mask)[0]
    noise = rng.normals(ds.n_sequences * ds.n_steps * len(cols))
    noise = noise.reshape(ds.n_sequences, ds.n_steps, len(cols))
    seqs[:, :, cols] += noise * scale[cols]
    return replace(ds, sequences=seqs)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv_sequences(path, feature_names, exo_flags,
                       seq_id_column="sequence_id", dt=1.0) -> SequenceDataset:
    """Load sequences from a UTF-8 CSV with a header row.

    Rows are grouped by the sequence-id column; row order within an id is
    time order.  Empty cells parse as missing (NaN); any other non-numeric
    cell is an error naming the offending row and column.  All sequences
    must have equal length.
    """
    feature_names = tuple(feature_names)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        col_index = {}
        for name in (seq_id_column,) + feature_names:
            if name not in header:
                raise ValueError(f"{path}: missing column {name!r}")
            col_index[name] = header.index(name)
        groups: dict[str, list] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            sid = row[col_index[seq_id_column]]
            values = []
            for name in feature_names:
                cell = row[col_index[name]].strip()
                if cell == "":
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric value {cell!r} at row "
                        f"{line_no}, column {name!r}") from None
            groups.setdefault(sid, []).append(values)
    if not groups:
        raise ValueError(f"{path}: no data rows")
    lengths = {sid: len(rows) for sid, rows in groups.items()}
    if len(set(lengths.values())) != 1:
        detail = ", ".join(f"{s}:{n}" for s, n in sorted(lengths.items()))
        raise ValueError(f"{path}: ragged sequence lengths ({detail})")
    ids = tuple(groups.keys())
    seqs = np.array([groups[s] for s in ids], dtype=np.float64)
    return SequenceDataset(seqs, feature_names,
                           np.asarray(exo_flags, dtype=bool), dt=dt, ids=ids)


def save_csv_sequences(ds: SequenceDataset, path,
                       seq_id_column="sequence_id"):
    """Inverse of load_csv_sequences; NaN becomes an empty cell."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow((seq_id_column,) + ds.feature_names)
        for i, sid in enumerate(ds.ids):
            for t in range(ds.n_steps):
                row = [sid]
                for v in ds.sequences[i, t]:
                    row.append("" if math.isnan(v) else repr(float(v)))
                writer.writerow(row)


# ---------------------------------------------------------------------------
# Preprocessing and normalization
# ---------------------------------------------------------------------------

def preprocess(ds: SequenceDataset, clamp_bounds=None) -> SequenceDataset:
    """Resolve missing values and clamp outliers.

    Per sequence and feature: NaNs are forward-filled; leading NaNs become
    0 for exogenous features and the dataset-wide feature median otherwise.
    A feature with no observed value at all in some sequence is an error.
    ``clamp_bounds`` maps feature name -> (lo, hi).
    """
    seqs = ds.sequences.copy()
    medians = np.full(ds.n_features, np.nan)
    for j in range(ds.n_features):
        col = ds.sequences[:, :, j]
        if np.any(~np.isnan(col)):
            medians[j] = float(np.nanmedian(col))
    for i in range(ds.n_sequences):
        for j in range(ds.n_features):
            col = seqs[i, :, j]
            missing = np.isnan(col)
            if missing.all():
                raise ValueError(
                    f"feature {ds.feature_names[j]!r} entirely missing in "
                    f"sequence {ds.ids[i]!r}")
            if not missing.any():
                continue
            fill = 0.0 if ds.exo_mask[j] else medians[j]
            last = fill
            for t in range(ds.n_steps):
                if missing[t]:
                    col[t] = last
                else:
                    last = col[t]
    if clamp_bounds:
        for name, (lo, hi) in clamp_bounds.items():
            if name not in ds.feature_names:
                raise ValueError(f"clamp bound for unknown feature {name!r}")
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid clamp bounds for {name!r}")
            j = ds.feature_names.index(name)
            np.clip(seqs[:, :, j], lo, hi, out=seqs[:, :, j])
    return replace(ds, sequences=seqs)


@dataclass
class NormStats:
    """Per-feature min/max fitted on the training split only."""

    mins: np.ndarray
    maxs: np.ndarray

    @property
    def constant(self):
        """Features with zero range; they normalize to 0 and invert to min."""
        return self.maxs - self.mins == 0.0


def minmax_fit(ds: SequenceDataset) -> NormStats:
    return NormStats(mins=ds.sequences.min(axis=(0, 1)),
                     maxs=ds.sequences.max(axis=(0, 1)))


def minmax_apply(ds: SequenceDataset, stats: NormStats) -> SequenceDataset:
    span = stats.maxs - stats.mins
    safe = np.where(span == 0.0, 1.0, span)
    seqs = (ds.sequences - stats.mins) / safe
    seqs[:, :, stats.constant] = 0.0
    return replace(ds, sequences=seqs)


def minmax_invert(ds: SequenceDataset, stats: NormStats) -> SequenceDataset:
    span = stats.maxs - stats.mins
    seqs = ds.sequences * span + stats.mins
    return replace(ds, sequences=seqs)


# ---------------------------------------------------------------------------
# Windowing, splitting, rollouts
# ---------------------------------------------------------------------------

@dataclass
class WindowSet:
    """Flattened (window -> next step) samples from one dataset split."""

    inputs: np.ndarray     # (S, w, F) full feature windows
    targets: np.ndarray    # (S, O) next-step endogenous features
    window: int
    endo_indices: tuple

    def __len__(self):
        return self.inputs.shape[0]


def window_dataset(ds: SequenceDataset, w: int) -> WindowSet:
    """Slice every sequence into (steps t-w..t-1 -> step t) samples.

    Exactly T - w samples per sequence; windows never cross sequence
    boundaries.  Targets exclude exogenous features.
    """
    if w < 1:
        raise ValueError("window length must be >= 1")
    T = ds.n_steps
    if T <= w:
        raise ValueError(f"need T > w (T={T}, w={w})")
    endo = ds.endo_indices
    inputs = []
    targets = []
    for i in range(ds.n_sequences):
        seq = ds.sequences[i]
        for t in range(w, T):
            inputs.append(seq[t - w:t])
            targets.append(seq[t, list(endo)])
    return WindowSet(inputs=np.asarray(inputs), targets=np.asarray(targets),
                     window=w, endo_indices=endo)


def fnv1a64(text: str) -> int:
    """Stable 64-bit FNV-1a hash of a string (split determinism)."""
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def split_by_id_hash(ds: SequenceDataset, fractions=(0.70, 0.15, 0.15)):
    """Deterministic train/val/test split by hashing sequence ids.

    Ids are ranked by FNV-1a hash and cut at the requested fractions, so a
    given id always lands in the same split regardless of cohort order; the
    returned subsets preserve original sequence order.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or \
            abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negatives summing to 1")
    n = ds.n_sequences
    ranked = sorted(range(n), key=lambda i: (fnv1a64(ds.ids[i]), ds.ids[i]))
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train_ids = set(ranked[:n_train])
    val_ids = set(ranked[n_train:n_train + n_val])
    subsets = []
    for member in (train_ids, val_ids,
                   set(ranked[n_train + n_val:])):
        subsets.append(ds.subset([i for i in range(n) if i in member]))
    return tuple(subsets)


@dataclass
class RolloutPoint:
    k: int
    mae: float
    rmse: float


def rollout_eval(model, ds: SequenceDataset, K: int, window: int,
                 input_ds: SequenceDataset | None = None):
    """Recursive K-step forecasts fed back as inputs.

    From every start index: predict the next step, splice the prediction
    into the endogenous slots of the next input row while exogenous slots
    come from the (true) data, and repeat K times.  Metrics are computed
    per horizon against ``ds`` (the clean reference); ``input_ds`` supplies
    the measured inputs when they differ (e.g. noise-corrupted copies).

    Returns (list of RolloutPoint for k=1..K, number of start indices per
    sequence); starts that would run past the sequence end are skipped via
    the start-range computation.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    src = input_ds if input_ds is not None else ds
    if src.sequences.shape != ds.sequences.shape:
        raise ValueError("input_ds must match ds shape")
    T = ds.n_steps
    n_starts = T - window - K + 1
    if n_starts < 1:
        raise ValueError(
            f"no rollout starts: need T >= window + K (T={T}, "
            f"window={window}, K={K})")
    endo = list(ds.endo_indices)
    starts = np.arange(window, T - K + 1)
    cur = []
    for i in range(ds.n_sequences):
        for t0 in starts:
            cur.append(src.sequences[i, t0 - window:t0])
    cur = np.asarray(cur)
    clean = ds.sequences
    points = []
    R = cur.shape[0]
    for k in range(1, K + 1):
        pred = model.predict(cur)
        tgt = np.empty_like(pred)
        r = 0
        for i in range(ds.n_sequences):
            for t0 in starts:
                tgt[r] = clean[i, t0 + k - 1, endo]
                r += 1
        err = pred - tgt
        points.append(RolloutPoint(k=k, mae=float(np.mean(np.abs(err))),
                                   rmse=float(np.sqrt(np.mean(err * err)))))
        if k < K:
            nxt = np.empty((R, 1, ds.n_features))
            r = 0
            for i in range(ds.n_sequences):
                for t0 in starts:
                    nxt[r, 0] = src.sequences[i, t0 + k - 1]
                    nxt[r, 0, endo] = pred[r]
                    r += 1
            cur = np.concatenate([cur[:, 1:], nxt], axis=1)
    return points, int(len(starts))
