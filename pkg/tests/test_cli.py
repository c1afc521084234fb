import json
import sys
from pathlib import Path

import numpy as np
import pytest

from recalx import cli

FIXTURE = Path(__file__).parent / "fixtures" / "line_adapter.py"


def run(*argv) -> int:
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synthetic problem with fitted temperatures, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("synth", "--features", "6", "--cardinality", "3", "--classes", "3",
               "--informative", "2", "--train", "30", "--val", "150",
               "--eval", "150", "--seed", "11", "--out-dir", str(data)) == 0
    fit = root / "fit"
    assert run("fit", "--model", f"bayes:{data}/problem.json", "--miscalibrate", "3",
               "--data", f"{data}/val.csv", "--bins", "5", "--masks", "6",
               "--seed", "5", "--out-dir", str(fit)) == 0
    return root


def test_synth_outputs_complete(workspace):
    data = workspace / "data"
    for name in ("problem.json", "train.csv", "val.csv", "eval.csv", "synth-config.json"):
        assert (data / name).exists()
    snapshot = json.loads((data / "synth-config.json").read_text())
    assert snapshot["command"] == "synth"
    assert snapshot["parameters"]["features"] == 6
    train = (data / "train.csv").read_text().splitlines()
    assert len(train) == 31  # header plus rows


def test_fit_writes_profile(workspace):
    profile = json.loads((workspace / "fit" / "profile.json").read_text())
    assert profile["bins"] == 5
    assert len(profile["temperatures"]) == 5
    # the c=3 wrapper should push every feasible bin's temperature well above 1
    assert all(t > 1.5 for t in profile["temperatures"])


def test_calib_report_runs_are_byte_identical(workspace):
    data = workspace / "data"
    args = ("calib-report", "--model", f"bayes:{data}/problem.json",
            "--miscalibrate", "3", "--data", f"{data}/eval.csv",
            "--profile", f"{workspace}/fit/profile.json", "--bins", "5",
            "--samples", "4", "--seed", "6")
    out1, out2 = workspace / "rep1", workspace / "rep2"
    assert run(*args, "--out-dir", str(out1)) == 0
    assert run(*args, "--out-dir", str(out2)) == 0
    for name in ("calibration.csv", "calibration.svg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    csv = (out1 / "calibration.csv").read_text().splitlines()
    assert csv[0] == "bin_lo,bin_hi,ce_before,ce_after,n"
    assert len(csv) == 6
    svg = (out1 / "calibration.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_explain_writes_attributions_and_metrics(workspace):
    data = workspace / "data"
    out = workspace / "explain"
    assert run("explain", "--model", f"bayes:{data}/problem.json",
               "--data", f"{data}/eval.csv", "--problem", f"{data}/problem.json",
               "--rows", "4", "--seed", "9", "--out-dir", str(out)) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert len(metrics["rows"]) == 4
    assert "mean_alignment" in metrics and "mean_localization" in metrics
    att = json.loads((out / "row-0000.attribution.json").read_text())
    assert att["method"] == "shapley-exact"
    assert len(att["scores"]) == 6
    csv = (out / "row-0000.attribution.csv").read_text().splitlines()
    assert csv[0] == "unit_index,score"
    assert len(csv) == 7


def test_explain_deterministic_across_runs(workspace):
    data = workspace / "data"
    args = ("explain", "--model", f"bayes:{data}/problem.json",
            "--data", f"{data}/eval.csv", "--method", "lime", "--samples", "64",
            "--rows", "2", "--seed", "14")
    out1, out2 = workspace / "exp1", workspace / "exp2"
    assert run(*args, "--out-dir", str(out1)) == 0
    assert run(*args, "--out-dir", str(out2)) == 0
    for name in ("row-0000.attribution.json", "row-0001.attribution.json", "metrics.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_verify_reports_and_exits_zero(workspace, capsys):
    data = workspace / "data"
    out = workspace / "verify"
    assert run("verify", "--problem", f"{data}/problem.json", "--miscalibrate", "3",
               "--trials", "10", "--seed", "3", "--out-dir", str(out)) == 0
    printed = capsys.readouterr().out
    assert "max |residual|" in printed
    decomp = (out / "decomposition.csv").read_text().splitlines()
    assert decomp[0] == "mask,v,bias,mi,ce,residual"
    assert len(decomp) == 2**6 + 1
    bound = json.loads((out / "bound.json").read_text())
    assert bound["satisfied"] == bound["trials"] == 10


def test_verify_exit_code_on_residual_breach(workspace, monkeypatch):
    monkeypatch.setattr(cli, "max_abs_residual", lambda results: 1.0)
    data = workspace / "data"
    code = run("verify", "--problem", f"{data}/problem.json", "--trials", "2",
               "--seed", "3", "--out-dir", str(workspace / "verify-fail"))
    assert code == 1


def test_config_file_merges_under_flags(workspace, tmp_path):
    data = workspace / "data"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bins": 4, "masks": 2, "seed": 99}))
    out = tmp_path / "out"
    assert run("fit", "--model", f"bayes:{data}/problem.json",
               "--data", f"{data}/val.csv", "--config", str(cfg),
               "--seed", "5", "--out-dir", str(out)) == 0
    snapshot = json.loads((out / "fit-config.json").read_text())
    assert snapshot["parameters"]["bins"] == 4  # from the file
    assert snapshot["parameters"]["seed"] == 5  # flag wins over the file


def test_unknown_config_key_is_usage_error(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    data = workspace / "data"
    assert run("fit", "--model", f"bayes:{data}/problem.json",
               "--data", f"{data}/val.csv", "--config", str(cfg),
               "--out-dir", str(tmp_path / "o")) == 2


def test_missing_required_flag_is_usage_error(tmp_path):
    assert run("fit", "--data", "nowhere.csv", "--out-dir", str(tmp_path)) == 2


def test_bad_model_source_is_usage_error(workspace, tmp_path):
    data = workspace / "data"
    assert run("fit", "--model", "weird:thing", "--data", f"{data}/val.csv",
               "--out-dir", str(tmp_path)) == 2
    assert run("fit", "--model", "linear:/does/not/exist.json",
               "--data", f"{data}/val.csv", "--out-dir", str(tmp_path)) == 2


def test_unknown_method_is_usage_error(workspace, tmp_path):
    data = workspace / "data"
    assert run("explain", "--model", f"bayes:{data}/problem.json",
               "--data", f"{data}/eval.csv", "--method", "saliency",
               "--rows", "1", "--out-dir", str(tmp_path)) == 2


def test_missing_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_single_bin_reduces_to_classic_temperature_scaling(workspace, tmp_path):
    data = workspace / "data"
    out = tmp_path / "fit1"
    assert run("fit", "--model", f"bayes:{data}/problem.json", "--miscalibrate", "3",
               "--data", f"{data}/val.csv", "--bins", "1", "--masks", "4",
               "--seed", "8", "--out-dir", str(out)) == 0
    profile = json.loads((out / "profile.json").read_text())
    assert len(profile["temperatures"]) == 1
    assert profile["temperatures"][0] > 1.5


def test_model_check_fixture_adapter_passes(tmp_path, capsys):
    command = f"exec:{sys.executable} {FIXTURE}"
    assert run("model-check", "--model", command, "--out-dir", str(tmp_path)) == 0
    report = json.loads((tmp_path / "model-check.json").read_text())
    assert report["passed"] == report["total"]
    printed = capsys.readouterr().out
    assert "hello-metadata" in printed


def test_model_check_reference_agreement(tmp_path):
    weights = tmp_path / "weights.json"
    weights.write_text(json.dumps({
        "weights": [[0.7, -0.4, 0.2], [-0.1, 0.5, -0.3], [0.0, 0.1, 0.4]],
        "bias": [0.05, -0.2, 0.1],
    }))
    command = f"exec:{sys.executable} {FIXTURE} --weights {weights}"
    assert run("model-check", "--model", command, "--reference", str(weights),
               "--out-dir", str(tmp_path / "out")) == 0
    report = json.loads((tmp_path / "out" / "model-check.json").read_text())
    names = [c["check"] for c in report["checks"]]
    assert "reference-agreement" in names


def test_model_check_flags_misbehaving_adapter(tmp_path):
    command = f"exec:{sys.executable} {FIXTURE} --mode wrong-id"
    code = run("model-check", "--model", command, "--out-dir", str(tmp_path))
    assert code == 1
    report = json.loads((tmp_path / "model-check.json").read_text())
    assert any(c["status"] == "fail" for c in report["checks"])


def test_model_check_unlaunchable_command_exits_three(tmp_path):
    assert run("model-check", "--model", "exec:/no/such/program",
               "--out-dir", str(tmp_path)) == 3


def test_cli_linear_model_source(tmp_path):
    weights = tmp_path / "weights.json"
    weights.write_text(json.dumps({
        "weights": [[0.8, -0.5, 0.1, 0.0, 0.2, -0.1],
                    [-0.2, 0.4, -0.3, 0.1, 0.0, 0.3],
                    [0.1, 0.1, 0.2, -0.1, -0.2, -0.2]],
        "bias": [0.0, 0.1, -0.1],
    }))
    rng = np.random.default_rng(0)
    rows = ["label,x0,x1,x2,x3,x4,x5"]
    for _ in range(40):
        vals = rng.integers(1, 4, size=6)
        rows.append(f"{rng.integers(0, 3)}," + ",".join(str(float(v)) for v in vals))
    data = tmp_path / "data.csv"
    data.write_text("\n".join(rows) + "\n")
    out = tmp_path / "fit"
    assert run("fit", "--model", f"linear:{weights}", "--data", str(data),
               "--bins", "5", "--masks", "3", "--seed", "2",
               "--out-dir", str(out)) == 0
    assert (out / "profile.json").exists()


def test_exec_model_source_full_command(tmp_path):
    command = f"exec:{sys.executable} {FIXTURE}"
    rows = ["label,x0,x1,x2"]
    rng = np.random.default_rng(1)
    for _ in range(20):
        vals = rng.integers(1, 3, size=3)
        rows.append(f"{rng.integers(0, 3)}," + ",".join(str(float(v)) for v in vals))
    data = tmp_path / "data.csv"
    data.write_text("\n".join(rows) + "\n")
    out = tmp_path / "fit"
    assert run("fit", "--model", command, "--data", str(data), "--bins", "3",
               "--masks", "2", "--seed", "4", "--out-dir", str(out)) == 0
    assert (out / "profile.json").exists()
