import json

import pandas as pd
import pytest
from click.testing import CliRunner

from cli.main import ESTIMATE_COLUMNS, SIMULATE_COLUMNS, cli
from deduct.data_model import write_csv


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def gm1_csv(tmp_path, gm1_data):
    return write_csv(gm1_data, tmp_path / "gm1.csv")


def _estimate(runner, csv, tmp_path, *args):
    out = tmp_path / "est.csv"
    result = runner.invoke(cli, ["estimate", "--data", str(csv), "--z-cols", "Z", "--w-cols", "L",
                                 "--out", str(out), *args])
    return result, out


def test_estimate_complete_case(runner, gm1_csv, tmp_path):
    result, out = _estimate(runner, gm1_csv, tmp_path, "--estimator", "km-c", "--t", "0.5,1")
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert list(frame.columns) == ESTIMATE_COLUMNS
    assert frame["t"].tolist() == [0.5, 1.0]
    assert (frame["estimator"] == "KM.C").all()
    assert frame["alpha_hat"].isna().all()
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["command"] == "estimate"
    assert meta["n"] == 200
    assert meta["settings"]["estimator"] == "km-c"


def test_estimate_deductive_curve(runner, gm1_csv, tmp_path):
    support_out = tmp_path / "support.csv"
    fits_out = tmp_path / "fits.json"
    gateaux_out = tmp_path / "gateaux.csv"
    result, out = _estimate(runner, gm1_csv, tmp_path, "--t-grid", "0.2:1:0.4", "--alpha-zero",
                            "--dump-support", str(support_out), "--dump-fits", str(fits_out),
                            "--gateaux-out", str(gateaux_out))
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert frame["t"].tolist() == [0.2, 0.6, 1.0]
    assert frame["mortality"].is_monotonic_increasing
    assert (frame["alpha_hat"] == 0.0).all()
    assert len(pd.read_csv(gateaux_out)) == 3 * 200
    assert len(pd.read_csv(support_out)) > 0
    assert "selection" in json.loads(fits_out.read_text())["fits"]
    meta = json.loads(out.with_suffix(".json").read_text())
    assert all(r["gateaux_values"] == [] for r in meta["results"])


def test_estimate_with_gamma(runner, gm1_csv, tmp_path):
    result, out = _estimate(runner, gm1_csv, tmp_path, "--estimator", "km-c", "--gamma", "0.2")
    assert result.exit_code == 0, result.output
    assert json.loads(out.with_suffix(".json").read_text())["settings"]["gamma"] == 0.2


def test_missing_column_is_an_ingest_error(runner, tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("c,r_obs,s,x\n1.0,1,0,0.5\n")
    result, _ = _estimate(runner, csv, tmp_path)
    assert result.exit_code == 1
    assert "[ingest]" in result.output


def test_ragged_row_is_an_ingest_error(runner, tmp_path):
    csv = tmp_path / "ragged.csv"
    csv.write_text("c,r_obs,Z,L,s,x,delta\n2,1,0.1,NA,0,0.5,1\n2,0,0.3,0.4,1,0.6,1,9,9\n")
    result, _ = _estimate(runner, csv, tmp_path)
    assert result.exit_code == 1
    assert "[ingest] row 1:" in result.output


def test_missing_dropout_column(runner, tmp_path, gm1_data):
    csv = write_csv(gm1_data, tmp_path / "gm1.csv")
    out = tmp_path / "est.csv"
    result = runner.invoke(cli, ["estimate", "--data", str(csv), "--z-cols", "Z", "--w-cols", "L",
                                 "--estimator", "km-c", "--gamma", "0.5", "--dropout-col", "L2", "--out", str(out)])
    assert result.exit_code == 1
    assert "L2" in result.output


@pytest.mark.parametrize(
    "args",
    [["--variant", "weibull"], ["--t", "a,b"], ["--t-grid", "1:0:0.5"], ["--bracket", "1"]],
)
def test_bad_options(runner, gm1_csv, tmp_path, args):
    result, _ = _estimate(runner, gm1_csv, tmp_path, *args)
    assert result.exit_code == 2


def test_config_file(runner, gm1_csv, tmp_path):
    good = tmp_path / "good.yaml"
    good.write_text("estimator: km-c\nt: [0.3, 0.9]\n")
    result, out = _estimate(runner, gm1_csv, tmp_path, "--config", str(good))
    assert result.exit_code == 0, result.output
    assert pd.read_csv(out)["t"].tolist() == [0.3, 0.9]

    bad = tmp_path / "bad.yaml"
    bad.write_text("estimator: km-c\ntolerance: 3\n")
    result, _ = _estimate(runner, gm1_csv, tmp_path, "--config", str(bad))
    assert result.exit_code == 2
    assert "tolerance" in result.output


def test_simulate(runner, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"sim{k}.csv"
        result = runner.invoke(cli, ["simulate", "--gm", "1", "--n", "60,80", "--reps", "4", "--estimators", "km-c",
                                     "--seed", "5", "--out", str(out), "--jobs-out", str(tmp_path / "jobs.json")])
        assert result.exit_code == 0, result.output
        outs.append(out.read_text())
    frame = pd.read_csv(tmp_path / "sim0.csv")
    assert list(frame.columns) == SIMULATE_COLUMNS
    assert frame["n"].tolist() == [60, 80]
    assert outs[0] == outs[1]
    assert len(json.loads((tmp_path / "jobs.json").read_text())) == 8


@pytest.mark.parametrize("args", [["--reps", "0"], ["--gm", "3"], ["--estimators", "aipw"], ["--n", "1"]])
def test_simulate_rejects(runner, tmp_path, args):
    base = {"--gm": "1", "--reps": "2", "--estimators": "km-c"}
    base.update(dict(zip(args[::2], args[1::2])))
    argv = ["simulate", *[v for kv in base.items() for v in kv], "--out", str(tmp_path / "s.csv")]
    result = runner.invoke(cli, argv)
    assert result.exit_code == 2


def test_describe(runner, tmp_path):
    out = tmp_path / "describe.csv"
    result = runner.invoke(cli, ["describe", "--gm", "GM2", "--n-mc", "5000", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "p_robs0\t" in result.output
    assert pd.read_csv(out)["gm"].tolist() == ["GM2"]


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert "deduct" in result.output


def test_estimate_runs_in_one_process(runner, gm1_csv, tmp_path):
    help_text = runner.invoke(cli, ["estimate", "--help"]).output
    assert "vectorized" in help_text and "--workers" in help_text
    result, _ = _estimate(runner, gm1_csv, tmp_path, "--workers", "2")
    assert result.exit_code == 2
