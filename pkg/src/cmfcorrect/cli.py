"""Command-line front end: ``generate``, ``run`` and ``report``.

Exit codes: 0 success, 2 usage/config, 3 data validation, 4 numeric failure.
"""

import argparse
import configparser
import hashlib
import logging
import os
import sys
from pathlib import Path

from . import __version__, nn, reports
from .dsp import INTERVALS_S, parse_rate
from .errors import CmfError, ConfigError, NumericError, ParameterError, ParseError, ValidationError
from .evaluation import ErrorVector, aggregate_over_seeds
from .pipeline import run as run_pipeline
from .rig import RigConfig, generate_dataset, load_dataset, save_dataset

log = logging.getLogger("cmfcorrect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SWEEP_RATES = tuple(f"{i:g}s" for i in INTERVALS_S) + ("60s",)
MODELS = nn.KINDS
MANIFEST = "manifest.txt"
FAILED = "FAILED"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_seeds(text):
    """``1..30``, ``1,2,5`` or a mix such as ``1..3,7``."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = (int(x) for x in part.split(".."))
                if hi < lo:
                    raise ValueError(part)
                seeds.extend(range(lo, hi + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise ParameterError(f"bad seed list {text!r}; use e.g. 1..30 or 1,2,3") from None
    if not seeds or min(seeds) < 0:
        raise ParameterError(f"bad seed list {text!r}")
    return sorted(set(seeds))


# -- key=value files ----------------------------------------------------------


def write_kv(path, items):
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items), encoding="ascii")


def read_kv(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"{path}: expected key=value", lineno)
        out[key.strip()] = value.strip()
    return out


def read_rig_config(path, seed=None):
    if path is None:
        values = {}
    else:
        if not Path(path).is_file():
            raise ConfigError("config", f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError("config", f"{path}: {exc}") from None
        unknown = [s for s in parser.sections() if s != "rig"]
        if unknown:
            raise ConfigError("config", f"{path}: unknown section(s) {unknown}")
        values = dict(parser["rig"]) if parser.has_section("rig") else {}
    if seed is not None:
        values["seed"] = str(seed)
    return RigConfig.from_mapping(values)


# -- generate -----------------------------------------------------------------


def cmd_generate(args):
    cfg = read_rig_config(args.config, args.seed)
    ds = generate_dataset(cfg)
    save_dataset(ds, args.out)
    cfg_text = "".join(f"{k}={v!r}\n" for k, v in cfg.as_dict().items())
    items = [("tool", "cmfcorrect"), ("version", __version__), ("command", "generate")]
    items += [(f"rig.{k}", repr(v)) for k, v in cfg.as_dict().items()]
    items += [
        ("config_sha256", hashlib.sha256(cfg_text.encode()).hexdigest()),
        ("dataset", Path(args.out).name),
        ("dataset_sha256", sha256_file(args.out)),
        ("experiments", len(ds)),
    ]
    write_kv(str(args.out) + ".manifest", items)
    print(f"wrote {len(ds)} experiments to {args.out}")
    return EXIT_OK


# -- run ----------------------------------------------------------------------

# manifest keys that define a run; their hash is the run's config hash
RUN_KEYS = (
    "rate", "model", "parity", "seeds", "split_seed", "tune",
    "learning_rate", "weight_decay", "batch_size", "max_epochs", "patience", "window_len",
)


def _config_hash(values):
    text = "".join(f"{k}={values[k]}\n" for k in RUN_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()


def _manifest_items(dataset, dataset_hash, res, seeds, split_seed, tune, failed):
    cfg = res.cfg
    values = {
        "rate": res.rate,
        "model": res.kind,
        "parity": res.parity,
        "seeds": ",".join(str(s) for s in seeds),
        "split_seed": split_seed,
        "tune": str(bool(tune)).lower(),
        "learning_rate": repr(cfg.learning_rate),
        "weight_decay": repr(cfg.weight_decay),
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "window_len": res.spec.window_len if res.kind != "mlp" else "-",
    }
    items = [("tool", "cmfcorrect"), ("version", __version__), ("command", "run")]
    items += [("dataset", str(Path(dataset).resolve())), ("dataset_sha256", dataset_hash)]
    items += list(values.items())
    items += [
        ("config_sha256", _config_hash(values)),
        ("failed_seeds", ",".join(str(s) for s in failed)),
        ("artifacts", "report.tsv,gvf_bins.tsv,predictions.tsv,baseline.tsv,"
                      "split_plan.txt,logs/,checkpoints/"),
    ]
    return items


def execute_run(ds, dataset, dataset_hash, out, rate, model, parity, seeds,
                split_seed=0, jobs=1, tune=False, overrides=None):
    """Run one (rate, model, parity) combination into ``out``; returns an exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILED).unlink(missing_ok=True)
    try:
        res = run_pipeline(ds, rate, model, parity, seeds, split_seed=split_seed,
                           jobs=jobs, tune=tune, train_overrides=overrides)
        (out / "split_plan.txt").write_text(res.plan.to_text(), encoding="ascii")
        (out / "logs").mkdir(exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        for r in res.ok_runs:
            (out / "logs" / f"seed_{r.seed}.tsv").write_text(r.log.to_tsv(), encoding="ascii")
            nn.save_checkpoint(r.params, out / "checkpoints" / f"seed_{r.seed}.json")
        write_kv(out / MANIFEST, _manifest_items(dataset, dataset_hash, res, seeds,
                                                 split_seed, tune, res.failed_seeds))
        (out / "baseline.tsv").write_text(reports.errors_to_text([res.baseline]), encoding="ascii")
        if not res.ok_runs:
            raise NumericError("every seed failed: " + "; ".join(r.error for r in res.runs))
        vectors = [r.errors for r in res.ok_runs]
        label = f"{model}_{res.rate}_{parity}"
        (out / "predictions.tsv").write_text(reports.errors_to_text(vectors), encoding="ascii")
        (out / "report.tsv").write_text(reports.run_report(label, vectors, res.baseline),
                                        encoding="ascii")
        (out / "gvf_bins.tsv").write_text(
            reports.binned_table([(label, ErrorVector.concat(vectors))]), encoding="ascii")
        if res.failed_seeds:
            msg = "; ".join(f"seed {r.seed}: {r.error}" for r in res.runs if r.error)
            (out / FAILED).write_text(msg + "\n", encoding="ascii")
            log.error("%s: %s", out, msg)
            return EXIT_NUMERIC
        pooled = aggregate_over_seeds(vectors, "pooled")
        print(f"{label}: p95|RE| {pooled.p95_re:.3f}% over {len(vectors)} seed(s) -> {out}")
        return EXIT_OK
    except CmfError as exc:
        (out / FAILED).write_text(f"{type(exc).__name__}: {exc}\n", encoding="ascii")
        raise


def _run_from_manifest(args):
    m = read_kv(args.manifest)
    missing = [k for k in RUN_KEYS + ("dataset", "dataset_sha256") if k not in m]
    if missing:
        raise ConfigError("manifest", f"{args.manifest}: missing keys {missing}")
    dataset = args.dataset or m["dataset"]
    if sha256_file(dataset) != m["dataset_sha256"]:
        raise ValidationError(f"{dataset} does not match the manifest's dataset hash")
    overrides = {
        "learning_rate": float(m["learning_rate"]),
        "weight_decay": float(m["weight_decay"]),
        "batch_size": int(m["batch_size"]),
        "max_epochs": int(m["max_epochs"]),
        "patience": int(m["patience"]),
    }
    ds = load_dataset(dataset)
    return execute_run(ds, dataset, m["dataset_sha256"], args.out, m["rate"], m["model"],
                       m["parity"], parse_seeds(m["seeds"]), int(m["split_seed"]),
                       args.jobs, False, overrides)


def cmd_run(args):
    if args.jobs < 1:
        raise ParameterError("--jobs must be >= 1")
    if args.manifest:
        return _run_from_manifest(args)
    if not args.dataset:
        raise ParameterError("run needs a dataset (or --manifest)")
    overrides = {}
    if args.max_epochs is not None:
        overrides["max_epochs"] = args.max_epochs
    seeds = parse_seeds(args.seeds)
    if args.all:
        combos = [(r, m, p) for r in SWEEP_RATES for m in MODELS for p in ("even", "odd")]
    else:
        if not (args.rate and args.model and args.parity):
            raise ParameterError("run needs --rate, --model and --parity (or --all)")
        parse_rate(args.rate)
        combos = [(args.rate, args.model, args.parity)]
    if not Path(args.dataset).is_file():
        raise ValidationError(f"dataset not found: {args.dataset}")
    ds = load_dataset(args.dataset)
    digest = sha256_file(args.dataset)
    worst = EXIT_OK
    for rate, model, parity in combos:
        out = Path(args.out)
        if args.all:
            out = out / f"{parse_rate(rate).label}_{model}_{parity}"
        try:
            code = execute_run(ds, args.dataset, digest, out, rate, model, parity, seeds,
                               args.split_seed, args.jobs, args.tune, overrides)
        except CmfError as exc:
            if not args.all:
                raise
            log.error("%s: %s", out, exc)
            code = exc.exit_code
        worst = max(worst, code)
    return worst


# -- report -------------------------------------------------------------------


def _load_run(path):
    path = Path(path)
    if not (path / MANIFEST).is_file():
        raise ValidationError(f"{path}: no {MANIFEST}; not a run directory")
    if (path / FAILED).exists():
        raise ValidationError(f"{path}: run is marked FAILED")
    m = read_kv(path / MANIFEST)
    vectors = reports.errors_from_text((path / "predictions.tsv").read_text(encoding="ascii"))
    baseline = reports.errors_from_text((path / "baseline.tsv").read_text(encoding="ascii"))[0]
    return m, vectors, baseline


def cmd_report(args):
    runs = [_load_run(p) for p in args.runs]
    hashes = {m["dataset_sha256"] for m, _, _ in runs}
    if len(hashes) > 1:
        detail = ", ".join(f"{p}: {m['dataset_sha256'][:12]}" for p, (m, _, _) in zip(args.runs, runs))
        raise ValidationError(f"runs come from different datasets ({detail})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pooled, per_seed, binned, series = [], [], [], {}
    baselines = {}
    for m, vectors, baseline in runs:
        label = f"{m['model']}_{m['rate']}_{m['parity']}"
        pooled.append((label, aggregate_over_seeds(vectors, "pooled")))
        per_seed.append((label, aggregate_over_seeds(vectors, "per_seed_mean_std")))
        binned.append((label, ErrorVector.concat(vectors)))
        series[label] = vectors
        baselines.setdefault(f"no_model_{m['rate']}_{m['parity']}", baseline)
    pooled += [(k, aggregate_over_seeds([v], "pooled")) for k, v in baselines.items()]

    (out / "comparison.tsv").write_text(reports.metrics_table(pooled), encoding="ascii")
    (out / "per_seed.tsv").write_text(reports.per_seed_table(per_seed), encoding="ascii")
    (out / "gvf_bins.tsv").write_text(reports.binned_table(binned), encoding="ascii")
    specs = [nn.default_spec(k, 5) for k in MODELS]
    (out / "complexity.tsv").write_text(
        reports.complexity_table(specs, latency_trials=args.latency_trials), encoding="ascii")
    (out / "plot_data.tsv").write_text(reports.plot_data(series), encoding="ascii")
    print(f"compared {len(runs)} run(s) -> {out}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def _default_jobs():
    raw = os.environ.get("CMF_CORRECT_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="cmfcorrect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic rig dataset")
    g.add_argument("--config", help="key=value file with a [rig] section")
    g.add_argument("--out", required=True, help="dataset path to write")
    g.add_argument("--seed", type=int, help="overrides the config file's seed")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="preprocess, split, train and evaluate")
    r.add_argument("dataset", nargs="?", help="dataset file from 'generate'")
    r.add_argument("--rate", help="0.25|0.5|1|2|3|4|5|6 (seconds, optional 's'), original or 60s")
    r.add_argument("--model", choices=MODELS)
    r.add_argument("--parity", choices=("even", "odd"))
    r.add_argument("--seeds", default="1..30", help="e.g. 1..30 or 1,2,3 (default 1..30)")
    r.add_argument("--all", action="store_true", help="sweep every rate, model and parity")
    r.add_argument("--split-seed", type=int, default=0, help="seed for the validation draw")
    r.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="parallel seeds (default $CMF_CORRECT_JOBS or 1)")
    r.add_argument("--tune", action="store_true", help="grid-search lr/weight decay first")
    r.add_argument("--max-epochs", type=int, help="override the epoch cap")
    r.add_argument("--manifest", help="reproduce the run described by this manifest")
    r.add_argument("--out", required=True, help="run directory")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("report", help="compare completed runs")
    c.add_argument("runs", nargs="+", help="run directories")
    c.add_argument("--out", required=True, help="directory for the comparison tables")
    c.add_argument("--latency-trials", type=int, default=0,
                   help="time this many forward passes per model (0 = skip)")
    c.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CmfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_DATA if args.command != "generate" else EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
