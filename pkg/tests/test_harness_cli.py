import csv
import json

import numpy as np
import pytest

from dfe.channels import CliffordCircuit
from dfe.cli import main
from dfe.harness import (
    ExperimentSpec,
    histogram_csv,
    parse_channel_target,
    parse_state_target,
    run,
    trial_seeds,
)


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def bell_circuit(tmp_path):
    path = tmp_path / "bell.txt"
    path.write_text("H 0\nCNOT 0 1\nS 1\n")
    return path


def test_state_command(capsys):
    code, out, _ = run_cli(capsys, "state", "--target", "ghz:4", "--noise", "depolarize:0.1", "--seed", "1")
    assert code == 0
    data = json.loads(out)
    assert data["metadata"]["target"] == "ghz:4"
    assert len(data["settings"]) == data["ell"] == 8000


def test_state_no_records(capsys):
    code, out, _ = run_cli(capsys, "state", "--target", "w:3", "--seed", "2", "--no-records")
    assert code == 0 and "settings" not in json.loads(out)


def test_channel_command(capsys, bell_circuit, tmp_path):
    out_dir = tmp_path / "run"
    code, out, _ = run_cli(
        capsys, "channel", "--target", f"clifford:{bell_circuit}", "--noise", "depolarize:0.1",
        "--seed", "3", "--out", str(out_dir), "--no-records",
    )
    assert code == 0
    data = json.loads(out)
    assert data["metadata"]["f_e_exact"] == pytest.approx(0.9 + 0.1 / 16)
    saved = json.loads((out_dir / "channel_result.json").read_text())
    assert saved["f_e"] == data["f_e"]


def test_channel_log_preparations(capsys):
    code, out, _ = run_cli(
        capsys, "channel", "--target", "cnot", "--epsilon", "0.3", "--delta", "0.3", "--seed", "0",
        "--log-preparations", "--sign-convention", "absorbed",
    )
    assert code == 0
    data = json.loads(out)
    assert all(len(s["prepared"]) == s["m"] for s in data["settings"])
    assert data["metadata"]["sign_convention"] == "absorbed"


def test_outputs_byte_identical(capsys, tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        code, stdout, _ = run_cli(
            capsys, "fig1", "--n", "3", "--trials", "6", "--seed", "9", "--out", str(out)
        )
        assert code == 0
        texts.append((stdout, *((out / f).read_bytes() for f in
                                ("summary.json", "trials.csv", "residual_hist.csv", "copies_hist.csv"))))
    assert texts[0] == texts[1]


def test_fig1_summary_and_histograms(tmp_path):
    summary = run(ExperimentSpec("fig1", n=3, trials=10, seed=4, out=str(tmp_path)))
    cfg = summary["config"]
    assert cfg["n"] == 3 and cfg["ell"] == 8000 and cfg["log"] == "natural"
    assert cfg["noise"]["kind"] == "depolarize_local" and cfg["noise"]["p"] == 0.1
    rows = list(csv.reader((tmp_path / "residual_hist.csv").open()))
    assert rows[0] == ["bin_lo", "bin_hi", "count"]
    assert sum(int(r[2]) for r in rows[1:]) == 10
    trials = list(csv.DictReader((tmp_path / "trials.csv").open()))
    assert len(trials) == 10
    for t in trials:
        assert float(t["residual"]) == pytest.approx(float(t["y_tilde"]) - float(t["fidelity"]))


def test_fig1_noiseless_unbiased():
    s = run(ExperimentSpec("fig1", n=3, trials=60, seed=5, noise="depolarize_local:0"))
    assert s["fidelity_mean"] == pytest.approx(1.0)
    assert abs(s["residual_mean"]) < 3 * s["residual_std_error_of_mean"]


def test_sample_dist(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "sample-dist", "--target", "w:3", "--trials", "20000", "--seed", "1",
                           "--out", str(tmp_path))
    assert code == 0
    data = json.loads(out)
    assert data["draws"] == 20000 and data["p_value"] > 0.001
    rows = list(csv.DictReader((tmp_path / "sample_dist.csv").open()))
    assert sum(int(r["count"]) for r in rows) == 20000
    assert sum(float(r["probability"]) for r in rows) == pytest.approx(1.0)


def test_calibrate_stabilizer_noiseless(tmp_path):
    spec = ExperimentSpec.from_dict(
        {"kind": "calibration", "n": 3, "trials": 60, "seed": 2, "noise": "dephase:0",
         "epsilon": 0.1, "delta": 0.1, "targets": ["ghz"], "out": str(tmp_path)}
    )
    report = run(spec)
    assert report["stage1_failures"] == 0
    assert report["stage2_ok"]
    assert json.loads((tmp_path / "calibration.json").read_text()) == report


def test_spec_file(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "state_dfe", "target": "ghz:3", "epsilon": 0.2, "delta": 0.2, "seed": 7}))
    code, out, _ = run_cli(capsys, "state", "--spec", str(spec), "--no-records")
    assert code == 0
    # ceil(1 / (0.2^2 * 0.2))
    assert json.loads(out)["ell"] == 125
    # flags override the file
    code, out, _ = run_cli(capsys, "state", "--spec", str(spec), "--epsilon", "0.3", "--no-records")
    # ceil(1 / (0.3^2 * 0.2)) = ceil(55.6)
    assert json.loads(out)["ell"] == 56


def test_spec_kind_mismatch(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "fig1"}))
    code, _, err = run_cli(capsys, "state", "--spec", str(spec))
    assert code == 1 and "fig1" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["state", "--epsilon", "abc"],
        ["state", "--target", "ghz:3", "--noise", "amplitude:0.1"],
        ["state", "--target", "ghz:3", "--trials", "0"],
    ],
)
def test_usage_errors(capsys, argv):
    assert run_cli(capsys, *argv)[0] == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["state", "--target", "nope:3"],
        ["state"],
        ["channel", "--target", "clifford:/does/not/exist"],
        ["state", "--target", "ghz:3", "--epsilon", "2"],
    ],
)
def test_runtime_errors(capsys, argv):
    assert run_cli(capsys, *argv)[0] == 2


def test_state_targets():
    for text in ("ghz:3", "stabilizer:XX,ZZ", "w:3", "dicke:4:2", "haar:2:1", "basis:2:3"):
        target, pure = parse_state_target(text)
        assert pure.n == target.n
    with pytest.raises(ValueError):
        parse_state_target("dicke:4")


def test_channel_targets(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text(CliffordCircuit.random(3, 10, np.random.default_rng(0)).to_text())
    assert parse_channel_target(f"clifford:{path}").n == 3
    assert parse_channel_target("random_clifford:5:20:1").is_clifford
    assert parse_channel_target("h").n == 1 and parse_channel_target("cnot").n == 2
    assert parse_channel_target("identity:4").n == 4
    assert parse_channel_target("haar_unitary:2:3").is_unitary
    with pytest.raises(ValueError):
        parse_channel_target("toffoli")


def test_histogram_overflow_rows():
    text = histogram_csv(np.array([-1.0, 0.05, 0.5]), np.array([0.0, 0.1]))
    rows = list(csv.reader(text.splitlines()))
    counts = {(r[0], r[1]): int(r[2]) for r in rows[1:]}
    assert sum(counts.values()) == 3
    assert counts[("-inf", "0.0")] == 1 and counts[("0.1", "inf")] == 1


def test_trial_seeds_stable():
    a = [s.generate_state(1)[0] for s in trial_seeds(3, 4)]
    b = [s.generate_state(1)[0] for s in trial_seeds(3, 4)]
    assert a == b and len(set(a)) == 4


def test_unknown_spec_keys_become_options():
    spec = ExperimentSpec.from_dict({"kind": "channel_dfe", "target": "cnot", "sign_convention": "absorbed"})
    assert spec.options == {"sign_convention": "absorbed"}
    with pytest.raises(ValueError):
        ExperimentSpec("nope")


def test_worker_count_does_not_change_results(monkeypatch):
    spec = dict(kind="fig1", n=2, trials=8, seed=11)
    serial = run(ExperimentSpec(**spec))
    monkeypatch.setenv("DFE_THREADS", "2")
    assert run(ExperimentSpec(**spec)) == serial
