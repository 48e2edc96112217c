"""Report tables and the generate/run/report command line."""

import numpy as np
import pytest

from cmfcorrect import cli, reports
from cmfcorrect.errors import ParseError
from cmfcorrect.evaluation import ErrorVector
from cmfcorrect.rig import load_dataset

RUN = ["--seeds", "1,2", "--max-epochs", "3"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "rig.ini").write_text("[rig]\nn_baselines = 4\nseed = 11\n")
    assert cli.main(["generate", "--config", str(root / "rig.ini"), "--out", str(root / "d.txt")]) == 0
    return root


@pytest.fixture(scope="module")
def cnn_run(workdir):
    out = workdir / "cnn"
    code = cli.main(["run", str(workdir / "d.txt"), "--rate", "4", "--model", "cnn",
                     "--parity", "odd", "--out", str(out)] + RUN)
    assert code == 0
    return out


# -- report helpers -------------------------------------------------------------


def test_errors_text_round_trip():
    a = ErrorVector([1.0, 2.5], [1.1, 2.4], gvf=[0.1, 0.3], seed=3)
    b = ErrorVector([7.0], [6.0], gvf=[0.9], seed=4)
    back = reports.errors_from_text(reports.errors_to_text([a, b]))
    assert [int(v.seed[0]) for v in back] == [3, 4]
    np.testing.assert_array_equal(back[0].y_hat, a.y_hat)
    np.testing.assert_array_equal(back[1].gvf, b.gvf)


def test_errors_text_rejects_garbage():
    with pytest.raises(ParseError):
        reports.errors_from_text("nonsense\n")
    with pytest.raises(ParseError):
        reports.errors_from_text("seed\ty\ty_hat\tgvf\n1\tx\t2\t0.1\n")


def test_complexity_table_without_latency():
    from cmfcorrect import nn

    text = reports.complexity_table([nn.default_spec(k, 5) for k in nn.KINDS])
    rows = [line.split("\t") for line in text.splitlines()]
    assert rows[0] == ["model", "window", "parameters", "macs"]
    assert [r[2:] for r in rows[1:]] == [["57", "96"], ["433", "832"], ["809", "6528"]]


def test_plot_data_one_series_per_label():
    rng = np.random.default_rng(0)
    vec = lambda s: ErrorVector(np.full(5, 100.0), 100 + rng.normal(0, 3, 5), rng.uniform(0, 1, 5), s)
    text = reports.plot_data({"a": [vec(1), vec(2)], "b": [vec(1)]})
    rows = [line.split("\t") for line in text.splitlines()[1:]]
    assert {r[0] for r in rows} == {"a", "b"}
    assert sum(1 for r in rows if r[0] == "a" and r[1] == "re_vs_flow") == 10
    assert {r[1] for r in rows} == {"re_vs_flow", "re_vs_gvf", "coverage"}


# -- generate -------------------------------------------------------------------


def test_generate_writes_manifest(workdir):
    ds = load_dataset(workdir / "d.txt")
    assert len(ds) == 24
    m = cli.read_kv(str(workdir / "d.txt") + ".manifest")
    assert m["rig.seed"] == "11" and m["dataset_sha256"] == cli.sha256_file(workdir / "d.txt")


def test_seed_flag_overrides_config(workdir, tmp_path):
    cli.main(["generate", "--config", str(workdir / "rig.ini"), "--seed", "12", "--out", str(tmp_path / "a")])
    cli.main(["generate", "--config", str(workdir / "rig.ini"), "--seed", "12", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a").read_bytes() != (workdir / "d.txt").read_bytes()


def test_missing_config_exits_2(tmp_path, capsys):
    path = tmp_path / "nope.ini"
    assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path / "d")]) == 2
    assert str(path) in capsys.readouterr().err


def test_bad_config_value_exits_2(tmp_path, capsys):
    (tmp_path / "rig.ini").write_text("[rig]\nbias_gain = 1.5\n")
    assert cli.main(["generate", "--config", str(tmp_path / "rig.ini"), "--out", str(tmp_path / "d")]) == 2
    assert "bias_gain" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["generate", "--out", "x", "--colour", "red"])
    assert info.value.code == 2


def test_parse_seeds():
    assert cli.parse_seeds("1..3,7") == [1, 2, 3, 7]
    assert cli.parse_seeds("1..30") == list(range(1, 31))
    with pytest.raises(cli.ParameterError):
        cli.parse_seeds("3..1")


# -- run ------------------------------------------------------------------------


def test_run_artifacts(cnn_run):
    names = {p.name for p in cnn_run.iterdir()}
    assert {"manifest.txt", "split_plan.txt", "report.tsv", "predictions.tsv", "baseline.tsv",
            "gvf_bins.tsv", "logs", "checkpoints"} <= names
    assert "FAILED" not in names
    assert sorted(p.name for p in (cnn_run / "logs").iterdir()) == ["seed_1.tsv", "seed_2.tsv"]
    m = cli.read_kv(cnn_run / "manifest.txt")
    assert m["window_len"] == "5" and m["seeds"] == "1,2" and m["failed_seeds"] == ""
    report = (cnn_run / "report.tsv").read_text()
    assert report.startswith("# aggregation=pooled\n")
    assert "# aggregation=per_seed_mean_std" in report and "\nno_model\t" in report
    assert "latency" not in report


def test_mlp_manifest_has_no_window(workdir, tmp_path):
    out = tmp_path / "mlp"
    assert cli.main(["run", str(workdir / "d.txt"), "--rate", "60s", "--model", "mlp",
                     "--parity", "even", "--out", str(out)] + RUN) == 0
    assert cli.read_kv(out / "manifest.txt")["window_len"] == "-"


def test_manifest_rerun_is_byte_identical(cnn_run, tmp_path):
    out = tmp_path / "again"
    assert cli.main(["run", "--manifest", str(cnn_run / "manifest.txt"), "--out", str(out)]) == 0
    for name in ("report.tsv", "predictions.tsv", "manifest.txt", "gvf_bins.tsv", "split_plan.txt"):
        assert (out / name).read_bytes() == (cnn_run / name).read_bytes(), name


def test_jobs_do_not_change_results(workdir, cnn_run, tmp_path):
    out = tmp_path / "par"
    assert cli.main(["run", str(workdir / "d.txt"), "--rate", "4", "--model", "cnn",
                     "--parity", "odd", "--jobs", "2", "--out", str(out)] + RUN) == 0
    assert (out / "report.tsv").read_bytes() == (cnn_run / "report.tsv").read_bytes()


def test_manifest_rejects_changed_dataset(workdir, cnn_run, tmp_path):
    other = tmp_path / "other.txt"
    cli.main(["generate", "--seed", "3", "--config", str(workdir / "rig.ini"), "--out", str(other)])
    code = cli.main(["run", str(other), "--manifest", str(cnn_run / "manifest.txt"),
                     "--out", str(tmp_path / "x")])
    assert code == 3


def test_run_missing_dataset_exits_3(tmp_path):
    code = cli.main(["run", str(tmp_path / "none.txt"), "--rate", "4", "--model", "cnn",
                     "--parity", "odd", "--out", str(tmp_path / "r")] + RUN)
    assert code == 3


def test_run_bad_rate_exits_2(workdir, tmp_path):
    code = cli.main(["run", str(workdir / "d.txt"), "--rate", "7", "--model", "cnn",
                     "--parity", "odd", "--out", str(tmp_path / "r")] + RUN)
    assert code == 2


def test_failed_run_marker(workdir, tmp_path):
    # four experiments leave too few groups per parity to split
    small = tmp_path / "tiny.txt"
    (tmp_path / "tiny.ini").write_text("[rig]\nn_baselines = 1\ngvf_steps_per_baseline = 4\n")
    assert cli.main(["generate", "--config", str(tmp_path / "tiny.ini"), "--out", str(small)]) == 0
    out = tmp_path / "r"
    code = cli.main(["run", str(small), "--rate", "4", "--model", "cnn", "--parity", "odd",
                     "--out", str(out)] + RUN)
    assert code == 3
    assert (out / "FAILED").exists()
    assert cli.main(["report", str(out), "--out", str(tmp_path / "rep")]) == 3


# -- report ---------------------------------------------------------------------


def test_report_tables(workdir, cnn_run, tmp_path):
    mlp = tmp_path / "mlp"
    cli.main(["run", str(workdir / "d.txt"), "--rate", "4", "--model", "mlp",
              "--parity", "odd", "--out", str(mlp)] + RUN)
    out = tmp_path / "rep"
    assert cli.main(["report", str(cnn_run), str(mlp), "--out", str(out)]) == 0
    comparison = (out / "comparison.tsv").read_text().splitlines()
    labels = [line.split("\t")[0] for line in comparison[1:]]
    assert labels == ["cnn_4s_odd", "mlp_4s_odd", "no_model_4s_odd"]
    complexity = (out / "complexity.tsv").read_text()
    assert "latency" not in complexity and "\t809\t6528" in complexity
    series = {line.split("\t")[0] for line in (out / "plot_data.tsv").read_text().splitlines()[1:]}
    assert series == {"cnn_4s_odd", "mlp_4s_odd"}
    assert (out / "per_seed.tsv").exists() and (out / "gvf_bins.tsv").exists()


def test_report_refuses_mixed_datasets(workdir, cnn_run, tmp_path, capsys):
    other = tmp_path / "other.txt"
    cli.main(["generate", "--seed", "3", "--config", str(workdir / "rig.ini"), "--out", str(other)])
    run2 = tmp_path / "r2"
    assert cli.main(["run", str(other), "--rate", "4", "--model", "cnn", "--parity", "odd",
                     "--out", str(run2)] + RUN) == 0
    assert cli.main(["report", str(cnn_run), str(run2), "--out", str(tmp_path / "rep")]) == 3
    assert "different datasets" in capsys.readouterr().err


def test_report_latency_columns(cnn_run, tmp_path):
    out = tmp_path / "rep"
    assert cli.main(["report", str(cnn_run), "--out", str(out), "--latency-trials", "20"]) == 0
    assert "latency_us_mean" in (out / "complexity.tsv").read_text()
