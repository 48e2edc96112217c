"""Plain-text report tables and plot-data files.

Every number goes through ``evaluation.fmt`` so reports are byte-stable
across runs; timing figures only appear where explicitly requested.
"""

import numpy as np

from . import nn
from .errors import ParseError
from .evaluation import (
    REPORT_HEADER,
    ErrorVector,
    EvalReport,
    aggregate_over_seeds,
    compute_metrics,
    coverage_curves,
    fmt,
    gvf_binned_report,
    relative_errors,
    report_rows,
)


def _tsv(rows):
    return "".join("\t".join(str(c) for c in row) + "\n" for row in rows)


def metrics_table(entries):
    """``entries`` is a list of (label, EvalReport); one row each."""
    rows = [["model"] + REPORT_HEADER]
    rows += [[label] + report_rows(rep) for label, rep in entries]
    return _tsv(rows)


def per_seed_table(entries):
    """Mean and population stdev per metric; ``entries`` are (label, SeedSummary)."""
    head = ["model", "n_seeds"]
    for name in EvalReport.METRICS:
        head += [f"{name}_mean", f"{name}_std"]
    rows = [head]
    for label, summary in entries:
        row = [label, str(summary.n_seeds)]
        for name in EvalReport.METRICS:
            row += [fmt(summary.mean[name]), fmt(summary.std[name])]
        rows.append(row)
    return _tsv(rows)


def binned_table(entries):
    """GVF-binned p95/MAPE/n per model; ``entries`` are (label, ErrorVector)."""
    binned = [(label, gvf_binned_report(ev)) for label, ev in entries]
    labels = [b for b, _ in binned[0][1]] if binned else []
    head = ["gvf_range"]
    for label, _ in binned:
        head += [f"{label}_n", f"{label}_p95", f"{label}_mape", f"{label}_le10"]
    rows = [head]
    for i, bin_label in enumerate(labels):
        row = [bin_label]
        for _, bins in binned:
            rep = bins[i][1] if i < len(bins) else None
            if rep is None:
                row += ["0", fmt(None), fmt(None), fmt(None)]
            else:
                row += [fmt(rep.n), fmt(rep.p95_re), fmt(rep.mape), fmt(rep.cov10)]
        rows.append(row)
    return _tsv(rows)


def complexity_table(specs, params=None, latency_trials=0):
    """Parameter and MAC counts; latency columns only when ``latency_trials`` > 0."""
    head = ["model", "window", "parameters", "macs"]
    if latency_trials:
        head += ["latency_us_mean", "latency_us_std"]
    rows = [head]
    for spec in specs:
        rep = nn.count_complexity(spec)
        row = [spec.kind, str(spec.window_len), str(rep.parameter_count), str(rep.macs_per_example)]
        if latency_trials:
            p = (params or {}).get(spec.kind) or nn.init_model(spec)
            mean, std = nn.measure_latency(p, latency_trials, warmup=min(100, latency_trials))
            row += [f"{mean:.3f}", f"{std:.3f}"]
        rows.append(row)
    return _tsv(rows)


def run_report(label, vectors, baseline):
    """Pooled table (model and no-model rows) followed by the per-seed summary."""
    pooled = aggregate_over_seeds(vectors, "pooled")
    per_seed = aggregate_over_seeds(vectors, "per_seed_mean_std")
    base = compute_metrics(baseline)
    return (
        "# aggregation=pooled\n"
        + metrics_table([(label, pooled), ("no_model", base)])
        + "# aggregation=per_seed_mean_std\n"
        + per_seed_table([(label, per_seed)])
    )


# -- raw prediction files -----------------------------------------------------


ERROR_HEADER = ("seed", "y", "y_hat", "gvf")


def errors_to_text(vectors):
    rows = [ERROR_HEADER]
    for ev in vectors:
        for s, y, yh, g in zip(ev.seed, ev.y, ev.y_hat, ev.gvf):
            rows.append((int(s), repr(float(y)), repr(float(yh)), repr(float(g))))
    return _tsv(rows)


def errors_from_text(text, split=""):
    """Inverse of ``errors_to_text``: one ErrorVector per seed, in file order."""
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != ERROR_HEADER:
        raise ParseError("missing prediction header", 1)
    try:
        data = np.array([[float(v) for v in ln.split("\t")] for ln in lines[1:]]).reshape(-1, 4)
    except ValueError as exc:
        raise ParseError(f"bad prediction record: {exc}") from None
    seeds = data[:, 0].astype(int)
    out = []
    for s in dict.fromkeys(seeds.tolist()):
        m = seeds == s
        out.append(ErrorVector(data[m, 1], data[m, 2], data[m, 3], s, split))
    return out


def plot_data(series):
    """Long-format plot data; ``series`` maps a label to its per-seed vectors.

    Three record kinds: ``re_vs_flow`` and ``re_vs_gvf`` hold one point per
    prediction; ``coverage`` holds the mean/stdev coverage curve over seeds.
    """
    rows = [("series", "kind", "x", "y", "y_std")]
    for label, vectors in series.items():
        pooled = ErrorVector.concat(vectors)
        re = relative_errors(pooled)
        for y, g, r in zip(pooled.y, pooled.gvf, re):
            rows.append((label, "re_vs_flow", fmt(y), fmt(r), ""))
        for y, g, r in zip(pooled.y, pooled.gvf, re):
            rows.append((label, "re_vs_gvf", fmt(g), fmt(r), ""))
        th, _, mean, std = coverage_curves(vectors)
        for t, m, s in zip(th, mean, std):
            rows.append((label, "coverage", fmt(t), fmt(m), fmt(s)))
    return _tsv(rows)
