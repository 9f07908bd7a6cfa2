"""Experiment harness: sectioned configs in, deterministic reports out.

A config is UTF-8 text with ``[section]`` headers, ``key = value`` lines and
``#`` comments.  Parsing resolves every default and records it, so the
emitted ``config_echo.txt`` fully describes the run.  Reports are pure
functions of (config, seed): identical runs emit byte-identical CSV/JSON.
Wall-clock timing is inherently not reproducible, so by default the
``seconds`` column of loss_history.csv and the summary carry 0.0
placeholders while the measured values go to ``timing.csv``, which is the
one output outside the determinism contract (set
``[output] deterministic_timing = false`` to inline real timings instead).
"""

import json
import os
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._backend import BACKEND_NAME
from .discrete_cells import ModelSpec, param_count
from .liquid_cells import build_ncp_wiring
from .models import FAMILIES, build_model, memory_estimate_bytes
from .numerics import rng_new
from .solvers import SolverConfig
from .tasks import (SequenceDataset, add_gaussian_noise, gen_damped_sine,
                    gen_synthetic_icu, load_csv_sequences, minmax_apply,
                    minmax_fit, preprocess, rollout_eval, split_by_id_hash,
                    window_dataset)
from .training import TrainConfig, compute_metrics, train_bptt

# rng stream ids (seed comes from [train] seed)
DATA_STREAM = 1
INIT_STREAM = 2
# training.SHUFFLE_STREAM = 3
WIRING_STREAM = 4
NOISE_STREAM_BASE = 1000


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

def _to_int(raw):
    return int(raw, 0)


def _to_float(raw):
    return float(raw)


def _to_bool(raw):
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_str(raw):
    return raw


def _to_float_list(raw):
    items = [s.strip() for s in raw.split(",") if s.strip() != ""]
    return tuple(float(s) for s in items)


def _to_int_list(raw):
    items = [s.strip() for s in raw.split(",") if s.strip() != ""]
    return tuple(int(s, 0) for s in items)


def _to_str_list(raw):
    return tuple(s.strip() for s in raw.split(",") if s.strip() != "")


@dataclass(frozen=True)
class _Key:
    convert: object
    default: object = None
    required: bool = False
    choices: tuple = ()


_SCHEMA = {
    "model": {
        "family": _Key(_to_str, required=True, choices=FAMILIES),
        "hidden": _Key(_to_int, default=None),
        "layers": _Key(_to_int, default=1),
        "wiring": _Key(_to_str, default="none", choices=("none", "ncp")),
        "ncp_inter": _Key(_to_int, default=None),
        "ncp_command": _Key(_to_int, default=None),
        "ncp_motor": _Key(_to_int, default=None),
        "ncp_fanouts": _Key(_to_int_list, default=(4, 4, 2)),
        "ncp_recurrent": _Key(_to_int, default=2),
        "cfc_t_gap": _Key(_to_float, default=1.0),
    },
    "solver": {
        "kind": _Key(_to_str, default=None,
                     choices=("euler", "rk4", "dopri5", "fused")),
        "dt": _Key(_to_float, default=0.1),
        "substeps": _Key(_to_int, default=1),
        "rtol": _Key(_to_float, default=1e-3),
        "atol": _Key(_to_float, default=1e-6),
    },
    "task": {
        "kind": _Key(_to_str, required=True,
                     choices=("damped_sine", "synthetic_icu", "csv")),
        "window": _Key(_to_int, default=10),
        "normalize": _Key(_to_bool, default=True),
        "split": _Key(_to_float_list, default=(0.70, 0.15, 0.15)),
        "n_sequences": _Key(_to_int, default=24),
        "length": _Key(_to_int, default=None),
        "sample_dt": _Key(_to_float, default=0.1),
        "decay": _Key(_to_float, default=0.05),
        "omega": _Key(_to_float, default=1.0),
        "phase_jitter": _Key(_to_float, default=1.5),
        "n_patients": _Key(_to_int, default=60),
        "n_vitals": _Key(_to_int, default=18),
        "n_interventions": _Key(_to_int, default=3),
        "intervention_rate": _Key(_to_float, default=0.08),
        "path": _Key(_to_str, default=None),
        "features": _Key(_to_str_list, default=()),
        "exo": _Key(_to_str_list, default=()),
        "id_column": _Key(_to_str, default="sequence_id"),
    },
    "train": {
        "epochs": _Key(_to_int, default=20),
        "batch_size": _Key(_to_int, default=32),
        "lr": _Key(_to_float, default=1e-3),
        "seed": _Key(_to_int, default=0),
        "shuffle": _Key(_to_bool, default=True),
        "clip_norm": _Key(_to_float, default=0.0),
    },
    "sweep": {
        "sigmas": _Key(_to_float_list, default=(0.0, 0.01, 0.02, 0.05)),
        "horizons": _Key(_to_int_list, default=(1, 2, 3, 5)),
        "noise_on_exogenous": _Key(_to_bool, default=False),
    },
    "output": {
        "dir": _Key(_to_str, default="runs/experiment"),
        "deterministic_timing": _Key(_to_bool, default=True),
    },
}

_TASK_LENGTH_DEFAULTS = {"damped_sine": 200, "synthetic_icu": 40, "csv": 0}


@dataclass
class ExperimentConfig:
    """Fully resolved configuration of one run."""

    values: dict = field(default_factory=dict)  # section -> key -> value

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, value):
        self.values[section][key] = value

    def echo(self) -> str:
        """Canonical text form (resolved defaults, schema order)."""
        lines = []
        for section in _SCHEMA:
            lines.append(f"[{section}]")
            for key in _SCHEMA[section]:
                lines.append(f"{key} = {_format_value(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    @property
    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                           lr=t["lr"], seed=t["seed"], shuffle=t["shuffle"],
                           clip_norm=t["clip_norm"])

    @property
    def solver_config(self) -> SolverConfig:
        s = self.values["solver"]
        return SolverConfig(kind=s["kind"], dt=s["dt"],
                            substeps=s["substeps"], rtol=s["rtol"],
                            atol=s["atol"])


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if value is None:
        return ""
    return str(value)


def _parse_lines(text):
    """text -> {section: {key: (raw, line_no)}} with syntax errors located."""
    sections: dict = {}
    current = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SCHEMA:
                raise ConfigError(f"unknown section [{name}]", line_no)
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}",
                              line_no)
        if current is None:
            raise ConfigError("key outside any [section]", line_no)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", line_no)
        current[key] = (raw, line_no)
    return sections


def parse_config(text) -> ExperimentConfig:
    """Parse and validate; unknown keys, bad types and bad enums all carry
    the offending line number."""
    sections = _parse_lines(text)
    cfg = ExperimentConfig()
    for section, keys in sections.items():
        for key, (raw, line_no) in keys.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}]", line_no)
    for section, schema in _SCHEMA.items():
        present = sections.get(section, {})
        out = {}
        for key, spec in schema.items():
            if key in present:
                raw, line_no = present[key]
                try:
                    value = spec.convert(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for {section}.{key}: {exc}",
                        line_no) from None
                if spec.choices and value not in spec.choices:
                    raise ConfigError(
                        f"{section}.{key} must be one of "
                        f"{', '.join(map(str, spec.choices))}; "
                        f"got {value!r}", line_no)
                out[key] = value
            elif spec.required:
                raise ConfigError(f"missing required key {section}.{key}")
            else:
                out[key] = spec.default
        cfg.values[section] = out
    _resolve_and_validate(cfg, sections)
    return cfg


def _line_of(sections, section, key):
    entry = sections.get(section, {}).get(key)
    return entry[1] if entry else None


def _resolve_and_validate(cfg, sections):
    v = cfg.values
    family = v["model"]["family"]
    task = v["task"]["kind"]

    if v["solver"]["kind"] is None:
        v["solver"]["kind"] = "euler" if family == "ssm" else "fused"
    if family == "ssm" and v["solver"]["kind"] != "euler":
        raise ConfigError("family ssm requires solver kind = euler",
                          _line_of(sections, "solver", "kind"))

    if v["task"]["length"] is None:
        v["task"]["length"] = _TASK_LENGTH_DEFAULTS[task]

    if v["model"]["wiring"] == "ncp":
        for key in ("ncp_inter", "ncp_command", "ncp_motor"):
            if v["model"][key] is None:
                raise ConfigError(f"wiring = ncp requires model.{key}")
        if family not in ("ltc", "cfc"):
            raise ConfigError("wiring = ncp applies to ltc or cfc",
                              _line_of(sections, "model", "wiring"))
        if v["model"]["layers"] != 1:
            raise ConfigError("wiring = ncp requires layers = 1",
                              _line_of(sections, "model", "layers"))
        derived = (v["model"]["ncp_inter"] + v["model"]["ncp_command"] +
                   v["model"]["ncp_motor"])
        if v["model"]["hidden"] is None:
            v["model"]["hidden"] = derived
        elif v["model"]["hidden"] != derived:
            raise ConfigError(
                f"hidden = {v['model']['hidden']} but NCP layers sum to "
                f"{derived}", _line_of(sections, "model", "hidden"))
        if len(v["model"]["ncp_fanouts"]) != 3 or \
                any(f < 1 for f in v["model"]["ncp_fanouts"]):
            raise ConfigError("ncp_fanouts needs three integers >= 1",
                              _line_of(sections, "model", "ncp_fanouts"))
    elif v["model"]["hidden"] is None:
        raise ConfigError("missing required key model.hidden")

    def check(cond, message, section=None, key=None):
        if not cond:
            raise ConfigError(message, _line_of(sections, section, key)
                              if section else None)

    check(v["model"]["hidden"] >= 1, "model.hidden must be >= 1",
          "model", "hidden")
    check(v["model"]["layers"] in (1, 2), "model.layers must be 1 or 2",
          "model", "layers")
    check(v["model"]["cfc_t_gap"] >= 0, "model.cfc_t_gap must be >= 0",
          "model", "cfc_t_gap")
    check(v["solver"]["dt"] > 0, "solver.dt must be > 0", "solver", "dt")
    check(v["solver"]["substeps"] >= 1, "solver.substeps must be >= 1",
          "solver", "substeps")
    check(v["solver"]["rtol"] > 0 and v["solver"]["atol"] > 0,
          "solver tolerances must be > 0", "solver", "rtol")
    check(v["train"]["epochs"] >= 1, "train.epochs must be >= 1",
          "train", "epochs")
    check(v["train"]["batch_size"] >= 1, "train.batch_size must be >= 1",
          "train", "batch_size")
    check(v["train"]["lr"] >= 0, "train.lr must be >= 0", "train", "lr")
    check(v["train"]["clip_norm"] >= 0, "train.clip_norm must be >= 0",
          "train", "clip_norm")
    check(v["task"]["window"] >= 1, "task.window must be >= 1",
          "task", "window")
    split = v["task"]["split"]
    check(len(split) == 3 and all(f >= 0 for f in split) and
          abs(sum(split) - 1.0) < 1e-9,
          "task.split needs three fractions summing to 1", "task", "split")
    check(all(s >= 0 for s in v["sweep"]["sigmas"]),
          "sweep.sigmas must be >= 0", "sweep", "sigmas")
    check(all(k >= 1 for k in v["sweep"]["horizons"]),
          "sweep.horizons must be >= 1", "sweep", "horizons")
    if task == "csv":
        check(v["task"]["path"] is not None, "task.kind = csv requires "
              "task.path")
        check(len(v["task"]["features"]) > 0, "task.kind = csv requires "
              "task.features")
        unknown_exo = set(v["task"]["exo"]) - set(v["task"]["features"])
        check(not unknown_exo, f"task.exo names not in features: "
              f"{sorted(unknown_exo)}", "task", "exo")
    else:
        check(v["task"]["length"] > v["task"]["window"],
              "task.length must exceed task.window", "task", "length")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Everything one run produced; emission renders it byte-for-byte."""

    version: str
    backend: str
    seed: int
    family: str
    config_echo: str
    param_count: int
    effective_param_count: int
    memory_estimate_bytes: int
    losses: list
    epoch_seconds: list
    metrics: dict
    rollout: list          # (k, mae, rmse)
    robustness: list       # (sigma, k, mae, rmse)
    rollout_starts: int
    deterministic_timing: bool

    def reported_seconds(self):
        if self.deterministic_timing:
            return [0.0] * len(self.epoch_seconds)
        return list(self.epoch_seconds)


def _build_dataset(cfg) -> SequenceDataset:
    t = cfg.values["task"]
    seed = cfg.get("train", "seed")
    rng = rng_new(seed, DATA_STREAM)
    if t["kind"] == "damped_sine":
        return gen_damped_sine(rng, t["n_sequences"], t["length"],
                               dt=t["sample_dt"], lam=t["decay"],
                               omega=t["omega"],
                               phase_jitter=t["phase_jitter"])
    if t["kind"] == "synthetic_icu":
        return gen_synthetic_icu(rng, t["n_patients"], t["length"],
                                 n_vitals=t["n_vitals"],
                                 n_interventions=t["n_interventions"],
                                 intervention_rate=t["intervention_rate"])
    ds = load_csv_sequences(t["path"], t["features"],
                            [name in t["exo"] for name in t["features"]],
                            seq_id_column=t["id_column"])
    return preprocess(ds)


def _build_model_for(cfg, input_dim, output_dim):
    m = cfg.values["model"]
    seed = cfg.get("train", "seed")
    wiring = None
    if m["wiring"] == "ncp":
        if m["ncp_motor"] is not None and m["ncp_motor"] != output_dim:
            raise ConfigError(
                f"ncp_motor = {m['ncp_motor']} but the task has "
                f"{output_dim} target features")
        wiring = build_ncp_wiring(
            rng_new(seed, WIRING_STREAM),
            (input_dim, m["ncp_inter"], m["ncp_command"], m["ncp_motor"]),
            m["ncp_fanouts"], recurrent_fanout=m["ncp_recurrent"])
    return build_model(m["family"], input_dim, output_dim, m["hidden"],
                       layers=m["layers"], rng=rng_new(seed, INIT_STREAM),
                       solver=cfg.solver_config, t_gap=m["cfc_t_gap"],
                       wiring=wiring)


def _split_metrics(model, windows):
    pred = model.predict(windows.inputs)
    res = compute_metrics(pred, windows.targets)
    return {"mae": res.mae, "rmse": res.rmse, "r2": res.r2,
            "r2_excluded_features": list(res.r2_excluded)}


def run_experiment(cfg: ExperimentConfig, robustness=False) -> MetricsReport:
    """Seed -> data -> split -> normalize -> window -> train -> evaluate."""
    seed = cfg.get("train", "seed")
    w = cfg.get("task", "window")
    ds = _build_dataset(cfg)
    train_ds, val_ds, test_ds = split_by_id_hash(ds, cfg.get("task", "split"))
    for name, part in (("train", train_ds), ("val", val_ds),
                       ("test", test_ds)):
        if part.n_sequences == 0:
            raise ConfigError(f"{name} split is empty; increase the number "
                              "of sequences or adjust task.split")
    stats = None
    if cfg.get("task", "normalize"):
        stats = minmax_fit(train_ds)
        train_ds = minmax_apply(train_ds, stats)
        val_ds = minmax_apply(val_ds, stats)
        test_ds = minmax_apply(test_ds, stats)
    train_w = window_dataset(train_ds, w)
    val_w = window_dataset(val_ds, w)
    test_w = window_dataset(test_ds, w)
    input_dim = ds.n_features
    output_dim = len(train_w.endo_indices)
    model = _build_model_for(cfg, input_dim, output_dim)
    history = train_bptt(model, train_w, cfg.train_config)
    metrics = {"train": _split_metrics(model, train_w),
               "val": _split_metrics(model, val_w),
               "test": _split_metrics(model, test_w)}
    horizons = sorted(set(cfg.get("sweep", "horizons")))
    rollout_rows = []
    robustness_rows = []
    n_starts = 0
    if horizons and test_ds.n_steps >= w + min(horizons):
        feasible = [k for k in horizons if test_ds.n_steps >= w + k]
        k_max = max(feasible)
        points, n_starts = rollout_eval(model, test_ds, k_max, w)
        by_k = {p.k: p for p in points}
        rollout_rows = [(k, by_k[k].mae, by_k[k].rmse) for k in feasible]
        if robustness:
            sigmas = cfg.get("sweep", "sigmas")
            on_exo = cfg.get("sweep", "noise_on_exogenous")
            for si, sigma in enumerate(sigmas):
                noisy = add_gaussian_noise(
                    rng_new(seed, NOISE_STREAM_BASE + si), test_ds, sigma,
                    relative_to="normalized_range" if stats is not None
                    else "amplitude",
                    include_exogenous=on_exo)
                pts, _ = rollout_eval(model, test_ds, k_max, w,
                                      input_ds=noisy)
                by_k_n = {p.k: p for p in pts}
                for k in feasible:
                    robustness_rows.append(
                        (sigma, k, by_k_n[k].mae, by_k_n[k].rmse))
    return MetricsReport(
        version=__version__,
        backend=BACKEND_NAME,
        seed=seed,
        family=model.family,
        config_echo=cfg.echo(),
        param_count=model.param_count,
        effective_param_count=model.effective_param_count,
        memory_estimate_bytes=memory_estimate_bytes(
            model, cfg.get("train", "batch_size"), w),
        losses=list(history.losses),
        epoch_seconds=list(history.seconds),
        metrics=metrics,
        rollout=rollout_rows,
        robustness=robustness_rows,
        rollout_starts=n_starts,
        deterministic_timing=cfg.get("output", "deterministic_timing"),
    )


def run_robustness_sweep(cfg: ExperimentConfig) -> MetricsReport:
    """Fresh train plus the (sigma x horizon) noise-robustness grid."""
    return run_experiment(cfg, robustness=True)


# ---------------------------------------------------------------------------
# Report emission (bytes are a pure function of the report)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    """Shortest round-tripping decimal form of a float."""
    return repr(float(x))


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv_report(report: MetricsReport, out_dir):
    """Write loss_history/metrics/rollout/robustness CSVs, the config echo,
    and the (non-deterministic) timing.csv sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    seconds = report.reported_seconds()
    lines = ["epoch,loss,seconds"]
    for i, loss in enumerate(report.losses, start=1):
        lines.append(f"{i},{_fmt(loss)},{_fmt(seconds[i - 1])}")
    _write(os.path.join(out_dir, "loss_history.csv"), "\n".join(lines) + "\n")

    lines = ["split,metric,value"]
    for split in ("train", "val", "test"):
        for metric in ("mae", "rmse", "r2"):
            lines.append(f"{split},{metric},"
                         f"{_fmt(report.metrics[split][metric])}")
    _write(os.path.join(out_dir, "metrics.csv"), "\n".join(lines) + "\n")

    lines = ["k,mae,rmse"]
    for k, mae, rmse in report.rollout:
        lines.append(f"{k},{_fmt(mae)},{_fmt(rmse)}")
    _write(os.path.join(out_dir, "rollout.csv"), "\n".join(lines) + "\n")

    lines = ["sigma,k,mae,rmse"]
    for sigma, k, mae, rmse in report.robustness:
        lines.append(f"{_fmt(sigma)},{k},{_fmt(mae)},{_fmt(rmse)}")
    _write(os.path.join(out_dir, "robustness.csv"), "\n".join(lines) + "\n")

    _write(os.path.join(out_dir, "config_echo.txt"), report.config_echo)

    lines = ["epoch,seconds"]
    for i, sec in enumerate(report.epoch_seconds, start=1):
        lines.append(f"{i},{_fmt(sec)}")
    _write(os.path.join(out_dir, "timing.csv"), "\n".join(lines) + "\n")


def emit_json_summary(report: MetricsReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "version": report.version,
        "backend": report.backend,
        "seed": report.seed,
        "family": report.family,
        "param_count": report.param_count,
        "effective_param_count": report.effective_param_count,
        "memory_estimate_bytes": report.memory_estimate_bytes,
        "losses": report.losses,
        "epoch_seconds": report.reported_seconds(),
        "deterministic_timing": report.deterministic_timing,
        "metrics": report.metrics,
        "rollout": [{"k": k, "mae": mae, "rmse": rmse}
                    for k, mae, rmse in report.rollout],
        "robustness": [{"sigma": s, "k": k, "mae": mae, "rmse": rmse}
                       for s, k, mae, rmse in report.robustness],
        "rollout_starts": report.rollout_starts,
        "config": report.config_echo,
    }
    _write(os.path.join(out_dir, "summary.json"),
           json.dumps(payload, indent=2, sort_keys=True) + "\n")


def emit_all(report: MetricsReport, out_dir):
    emit_csv_report(report, out_dir)
    emit_json_summary(report, out_dir)


# ---------------------------------------------------------------------------
# Timing profile
# ---------------------------------------------------------------------------

def profile_timing(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig,
                   epochs=6):
    """Median per-epoch wall seconds of two configs on their own tasks.

    Only orderings are meaningful; absolute values are hardware-bound.
    Both configs are trained for the same number of epochs (>= 5).
    """
    if epochs < 5:
        raise ValueError("profile needs at least 5 epochs for a median")
    records = []
    for cfg in (cfg_a, cfg_b):
        seed = cfg.get("train", "seed")
        w = cfg.get("task", "window")
        ds = _build_dataset(cfg)
        train_ds, _, _ = split_by_id_hash(ds, cfg.get("task", "split"))
        if cfg.get("task", "normalize"):
            train_ds = minmax_apply(train_ds, minmax_fit(train_ds))
        train_w = window_dataset(train_ds, w)
        model = _build_model_for(cfg, ds.n_features,
                                 len(train_w.endo_indices))
        tc = cfg.train_config
        tc.epochs = epochs
        history = train_bptt(model, train_w, tc)
        records.append({
            "family": model.family,
            "solver_kind": cfg.get("solver", "kind"),
            "hidden": cfg.get("model", "hidden"),
            "epochs": epochs,
            "median_epoch_seconds": statistics.median(history.seconds),
            "epoch_seconds": list(history.seconds),
        })
    ratio = (records[0]["median_epoch_seconds"] /
             records[1]["median_epoch_seconds"])
    return {"a": records[0], "b": records[1], "ratio_a_over_b": ratio}
