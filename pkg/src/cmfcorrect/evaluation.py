"""Error metrics, relative-error percentiles/coverage and GVF-binned reports."""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DomainError, ParameterError

DEFAULT_GVF_EDGES = (0.0, 0.15, 0.35, 0.50, 0.70, 0.80, 0.95)
PERCENTILES = (50, 95, 99)
COVERAGE_LEVELS = (10.0, 5.0)


@dataclass
class ErrorVector:
    y: np.ndarray
    y_hat: np.ndarray
    gvf: np.ndarray = None
    seed: np.ndarray = None
    split: str = ""

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.y_hat = np.asarray(self.y_hat, dtype=float)
        n = len(self.y)
        if self.y_hat.shape != self.y.shape:
            raise ParameterError(f"y has {n} values, y_hat has {len(self.y_hat)}")
        self.gvf = np.full(n, np.nan) if self.gvf is None else np.asarray(self.gvf, dtype=float)
        self.seed = np.zeros(n, dtype=int) if self.seed is None else np.asarray(self.seed)
        if self.seed.ndim == 0:
            self.seed = np.full(n, int(self.seed))
        if len(self.gvf) != n or len(self.seed) != n:
            raise ParameterError("gvf and seed must match y in length")

    def __len__(self):
        return len(self.y)

    @property
    def e(self):
        return self.y_hat - self.y

    def subset(self, mask):
        return ErrorVector(self.y[mask], self.y_hat[mask], self.gvf[mask], self.seed[mask], self.split)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        splits = {p.split for p in parts}
        if len(splits) > 1:
            raise ParameterError(f"cannot pool errors from different splits: {sorted(splits)}")
        return cls(
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.y_hat for p in parts]),
            np.concatenate([p.gvf for p in parts]),
            np.concatenate([p.seed for p in parts]),
            parts[0].split if parts else "",
        )


def relative_errors(ev):
    """Signed relative errors in percent: ``(y_hat - y) / y * 100``."""
    zero = np.flatnonzero(ev.y == 0)
    if len(zero):
        raise DomainError(zero)
    return (ev.y_hat - ev.y) / ev.y * 100.0


@dataclass
class EvalReport:
    """Metric bundle; ``None`` marks a metric that is undefined for the data."""

    n: int
    max_re: float
    p99_re: float
    p95_re: float
    p50_re: float
    cov10: float
    cov5: float
    rmse: float
    rnrmse: float | None
    avgnrmse: float | None
    mae: float
    medae: float
    mape: float
    medape: float
    r2: float | None
    aggregation: str = "pooled"
    bins: list = field(default_factory=list)

    METRICS = (
        "max_re", "p99_re", "p95_re", "p50_re", "cov10", "cov5",
        "rmse", "rnrmse", "avgnrmse", "mae", "medae", "mape", "medape", "r2",
    )

    def as_dict(self):
        return {name: getattr(self, name) for name in ("n",) + self.METRICS}


def coverage(abs_re, level):
    """Percentage of |RE| values at or below ``level`` percent."""
    return float(np.mean(abs_re <= level) * 100.0)


def compute_metrics(ev, aggregation="pooled"):
    n = len(ev)
    if n < 1:
        raise ParameterError("no samples to evaluate")
    y, e = ev.y, ev.e
    are = np.abs(relative_errors(ev))
    p50, p95, p99 = (float(v) for v in np.percentile(are, PERCENTILES))
    rmse = float(np.sqrt(np.mean(e * e)))
    y_range = float(y.max() - y.min())
    y_mean = float(y.mean())
    ss_tot = float(np.sum((y - y_mean) ** 2))
    return EvalReport(
        n=n,
        max_re=float(are.max()),
        p99_re=p99,
        p95_re=p95,
        p50_re=p50,
        cov10=coverage(are, 10.0),
        cov5=coverage(are, 5.0),
        rmse=rmse,
        rnrmse=rmse / y_range if y_range > 0 else None,
        avgnrmse=rmse / y_mean if y_mean != 0 else None,
        mae=float(np.mean(np.abs(e))),
        medae=float(np.median(np.abs(e))),
        mape=float(np.mean(are)),
        medape=float(np.median(are)),
        r2=1.0 - float(np.sum(e * e)) / ss_tot if y_range > 0 and ss_tot > 0 else None,
        aggregation=aggregation,
    )


def _bin_label(lo, hi):
    return f"{lo * 100:g}-{hi * 100:g}%"


def gvf_binned_report(ev, edges=DEFAULT_GVF_EDGES):
    """Reports per GVF range ``[lo, hi)``; the last range also includes ``hi``.

    Samples outside every range land in an ``overflow`` entry.  Empty ranges
    are returned with a ``None`` report so tables keep a fixed shape.
    """
    edges = tuple(float(x) for x in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ParameterError("bin edges must be strictly increasing")
    out = []
    assigned = np.zeros(len(ev), dtype=bool)
    last = len(edges) - 2
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        mask = (ev.gvf >= lo) & ((ev.gvf <= hi) if i == last else (ev.gvf < hi))
        assigned |= mask
        out.append((_bin_label(lo, hi), compute_metrics(ev.subset(mask)) if mask.any() else None))
    if not assigned.all():
        out.append(("overflow", compute_metrics(ev.subset(~assigned))))
    return out


def baseline_errors(windows, seed=0, split=""):
    """No-model errors: the apparent main-meter reading used as the prediction."""
    return ErrorVector(windows.y, windows.apparent, windows.gvf, seed, split)


def baseline_metrics(ds, spec, window_len=1):
    """Baseline report for whole experiments processed at ``spec``.

    Only samples that can end a window of ``window_len`` are scored, so the
    baseline covers the same time points as the models.
    """
    from .dsp import PER_EXPERIMENT_MEAN
    from .pipeline import prepare_experiments
    from .splits import WindowConfig, make_windows

    processed = prepare_experiments(ds, spec)
    pad = "edge" if spec.interval_s == PER_EXPERIMENT_MEAN else "none"
    windows = make_windows(processed, WindowConfig(window_len, pad=pad))
    return compute_metrics(baseline_errors(windows))


@dataclass
class SeedSummary:
    """Per-seed mean and (population) standard deviation of every metric."""

    n_seeds: int
    mean: dict
    std: dict
    aggregation: str = "per_seed_mean_std"


def aggregate_over_seeds(vectors, mode="pooled"):
    """Combine error vectors from several seeds.

    ``pooled`` concatenates all errors before computing statistics;
    ``per_seed_mean_std`` computes each seed's report then mean and stdev.
    """
    vectors = list(vectors)
    if not vectors:
        raise ParameterError("need at least one seed")
    if len({v.split for v in vectors}) > 1:
        raise ParameterError("cannot aggregate error vectors from different splits")
    if mode == "pooled":
        return compute_metrics(ErrorVector.concat(vectors), aggregation="pooled")
    if mode != "per_seed_mean_std":
        raise ParameterError(f"unknown aggregation mode {mode!r}")
    reports = [compute_metrics(v) for v in vectors]
    mean, std = {}, {}
    for name in EvalReport.METRICS:
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            mean[name] = std[name] = None
        else:
            mean[name] = float(np.mean(values))
            std[name] = float(np.std(values))
    return SeedSummary(len(reports), mean, std)


def coverage_curves(vectors, thresholds=None):
    """Coverage percentage vs |RE| threshold for each seed, with mean and stdev."""
    if thresholds is None:
        thresholds = np.arange(0.0, 50.5, 0.5)
    thresholds = np.asarray(thresholds, dtype=float)
    per_seed = np.array(
        [[coverage(np.abs(relative_errors(v)), th) for th in thresholds] for v in vectors]
    )
    return thresholds, per_seed, per_seed.mean(axis=0), per_seed.std(axis=0)


def fmt(value, digits=6):
    """Fixed, locale-free number formatting for report tables."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "undefined"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.{digits}g}"


def report_rows(report):
    return [fmt(getattr(report, name)) for name in ("n",) + EvalReport.METRICS]


REPORT_HEADER = ["n", "max", "p99", "p95", "p50", "le10", "le5", "rmse", "rnrmse",
                 "avgnrmse", "mae", "medae", "mape", "medape", "r2"]
