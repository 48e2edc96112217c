"""End-to-end run: preprocess -> group -> split -> window -> scale -> train -> evaluate."""

from dataclasses import dataclass, replace
import logging

from . import nn
from .dsp import PER_EXPERIMENT_MEAN, Preprocessor, parse_rate
from .evaluation import (
    ErrorVector,
    aggregate_over_seeds,
    baseline_errors,
    compute_metrics,
    gvf_binned_report,
)
from .splits import WindowConfig, assign_groups, build_windows, make_split, scale_split
from .train import default_grid, preset, seed_sweep, tune_hyperparameters, window_length

log = logging.getLogger(__name__)


def prepare_experiments(ds, spec, filter_length=129):
    """Resample every experiment's features and truth to ``spec``."""
    pre = Preprocessor(spec, filter_length)
    return [replace(exp, channels=pre(exp.channels), truth=pre(exp.truth)) for exp in ds]


def min_raw_samples(spec, window_len, filter_length=129):
    """Raw samples an experiment needs to yield at least one full window."""
    if spec.interval_s == PER_EXPERIMENT_MEAN:
        return 1
    need = (window_len - 1) * spec.factor + 1
    if spec.decimates and spec.factor > 1:
        need = max(need, filter_length)
    return need


@dataclass
class RunResult:
    rate: str
    kind: str
    parity: str
    spec: nn.ModelSpec
    cfg: object
    plan: object
    runs: list
    baseline: ErrorVector
    tuning: object = None

    @property
    def ok_runs(self):
        return [r for r in self.runs if r.error is None]

    @property
    def failed_seeds(self):
        return [r.seed for r in self.runs if r.error]

    def pooled(self):
        return aggregate_over_seeds([r.errors for r in self.ok_runs], "pooled")

    def per_seed(self):
        return aggregate_over_seeds([r.errors for r in self.ok_runs], "per_seed_mean_std")

    def binned(self):
        pooled = ErrorVector.concat([r.errors for r in self.ok_runs])
        return gvf_binned_report(pooled)

    def baseline_report(self):
        return compute_metrics(self.baseline)


def build_split_data(ds, rate, kind, parity, split_seed=0):
    """Everything up to scaled windows for one (rate, model, parity)."""
    spec_r = parse_rate(rate, ds[0].sample_rate_hz)
    label = spec_r.label
    master = window_length(label)
    ds = assign_groups(ds, min_raw_samples(spec_r, master))
    processed = prepare_experiments(ds, spec_r)
    pad = "edge" if spec_r.interval_s == PER_EXPERIMENT_MEAN else "none"
    plan = make_split(processed, parity, seed=split_seed)
    windows = build_windows(processed, plan, WindowConfig(master, pad=pad))
    model_window = 1 if kind == "mlp" else master
    return label, plan, windows, model_window


def run(ds, rate, kind, parity, seeds, split_seed=0, jobs=1, tune=False, train_overrides=None):
    label, plan, windows, model_window = build_split_data(ds, rate, kind, parity, split_seed)
    spec = nn.default_spec(kind, model_window)
    cfg = preset(label, kind, parity, **(train_overrides or {}))
    tuning = None
    if tune:
        tuning = tune_hyperparameters(spec, windows["train"].view(model_window), default_grid(), base=cfg)
        cfg = tuning.best
    data = scale_split(windows, model_window)
    runs = seed_sweep(spec, data, cfg, seeds, jobs=jobs)
    return RunResult(label, kind, parity, spec, cfg, plan, runs, baseline_errors(data.test), tuning)
