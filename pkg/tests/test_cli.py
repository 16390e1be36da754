import json

import numpy as np
import pytest
import torch

from gatr_wss.cli import main
from gatr_wss.descriptors import FeatureStats
from gatr_wss.hemo import TransientWssField
from gatr_wss.model import GatrConfig, ModelCheckpoint, build_model

SMALL = {"blocks": 2, "heads": 2, "channels": 4, "rate": 0.25, "timepoints": 21, "dropout": 0.0}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    cfg = write(root / "gen.json", {"cohort": {"n_geometries": 3, "sims_per_geometry": 1,
                                               "edge_length": 6.0}, "test_geometries": 1})
    assert main(["generate", "--config", cfg, "--out", str(root / "data"), "--seed", "4"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(cohort):
    cfg = write(cohort / "train.json", {"manifest": "data/manifest.json", "model": SMALL,
                                        "train": {"epochs": 1, "batch_size": 2}})
    out = cohort / "run"
    assert main(["train", "--config", cfg, "--out", str(out), "--deterministic"]) == 0
    return out


def test_generate_outputs(cohort):
    manifest = json.loads((cohort / "data" / "manifest.json").read_text())["simulations"]
    assert len(manifest) == 6
    assert {e["split"] for e in manifest if e["geometry"] == "g002"} == {"test"}
    report = json.loads((cohort / "data" / "generate_report.json").read_text())
    assert len(report["config_hash"]) == 16 and report["code_version"]


def test_train_outputs(trained):
    for name in ("checkpoint.gwss", "loss.csv", "loss.png", "train_report.json",
                 "config_snapshot.json", "test_metrics.csv"):
        assert (trained / name).exists(), name
    report = json.loads((trained / "train_report.json").read_text())
    assert {"nmae", "cos_similarity"} <= set(report["test"])
    assert (trained / "loss.png").read_bytes()[:4] == b"\x89PNG"


def test_train_zero_epochs_is_initial_model(cohort):
    cfg = write(cohort / "zero.json", {"manifest": "data/manifest.json", "model": SMALL,
                                       "train": {"epochs": 0, "seed": 3}})
    out = cohort / "zero"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    ck = ModelCheckpoint.load(out / "checkpoint.gwss")
    init = build_model("gatr", GatrConfig(**SMALL), seed=3).state_dict()
    assert all(torch.equal(ck.state[k], v) for k, v in init.items())


def test_train_is_repeatable(cohort, trained):
    cfg = str(cohort / "train.json")
    again = cohort / "run2"
    assert main(["train", "--config", cfg, "--out", str(again), "--deterministic"]) == 0
    assert (again / "loss.csv").read_text() == (trained / "loss.csv").read_text()
    a, b = (ModelCheckpoint.load(d / "checkpoint.gwss") for d in (trained, again))
    assert all(torch.equal(a.state[k], b.state[k]) for k in a.state)


def test_predict_and_evaluate(cohort, trained, capsys):
    pred = cohort / "pred.gwss"
    data = cohort / "data"
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.gwss"),
                 "--mesh", str(data / "g002.obj"), "--waveform", str(data / "sim0004_inflow.csv"),
                 "--out", str(pred)]) == 0
    truth = TransientWssField.load(data / "sim0004_wss.gwss")
    assert TransientWssField.load(pred).tau.shape == truth.tau.shape
    capsys.readouterr()
    ev = cohort / "ev_self"
    truth_path = str(data / "sim0004_wss.gwss")
    assert main(["evaluate", "--pred", truth_path, "--truth", truth_path, "--out", str(ev)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["mae"] == 0.0 and printed["cos_similarity"] == pytest.approx(1.0, abs=1e-12)
    report = json.loads((ev / "evaluation.json").read_text())
    assert main(["evaluate", "--pred", truth_path, "--truth", truth_path, "--out", str(ev) + "b"]) == 0
    assert main(["evaluate", "--pred", truth_path, "--truth", truth_path, "--out", str(ev) + "c",
                 "--seed", "1"]) == 0
    hashes = [json.loads((cohort / f"ev_self{s}" / "evaluation.json").read_text())["config_hash"]
              for s in ("b", "c")]
    assert hashes[0] == report["config_hash"] != hashes[1]
    assert (ev / "evaluation.csv").exists() and (ev / "magnitude_scatter.png").exists()


def test_equivariance_audit_untrained(cohort, tmp_path):
    ck = ModelCheckpoint.from_model("gatr", build_model("gatr", GatrConfig(**SMALL), seed=9),
                                    FeatureStats())
    ck.save(tmp_path / "init.gwss")
    cfg = write(tmp_path / "audit.json", {"manifest": str(cohort / "data" / "manifest.json"),
                                          "transforms": 6})
    assert main(["audit", "--checkpoint", str(tmp_path / "init.gwss"), "--suite", "equivariance",
                 "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "audit_equivariance.json").read_text())
    assert rep["result"]["max_relative_violation"] < 1e-4


def test_inflow_audit_writes_plot(cohort, trained, tmp_path):
    cfg = write(tmp_path / "audit.json", {"manifest": str(cohort / "data" / "manifest.json")})
    assert main(["audit", "--checkpoint", str(trained / "checkpoint.gwss"), "--suite", "inflow-sweep",
                 "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "inflow_sweep.csv").exists()
    assert (tmp_path / "s" / "inflow_sweep.png").read_bytes()[:4] == b"\x89PNG"


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_config_errors(tmp_path, capsys):
    bad = write(tmp_path / "bad.json", {"manifest": "nowhere.json"})
    assert main(["train", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert error_of(capsys)["exit_code"] == 2
    unknown = write(tmp_path / "unknown.json", {"cohort": {}, "colour": "red"})
    assert main(["generate", "--config", unknown, "--out", str(tmp_path / "o")]) == 2
    assert "colour" in error_of(capsys)["message"]
    wrong_field = write(tmp_path / "wrong.json", {"cohort": {"n_geometries": 2, "shape": 1}})
    assert main(["generate", "--config", wrong_field, "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2


def test_data_errors(tmp_path, capsys):
    a = tmp_path / "a.gwss"
    TransientWssField(np.ones((2, 3, 3))).save(a)
    b = tmp_path / "b.gwss"
    TransientWssField(np.ones((2, 4, 3))).save(b)
    assert main(["evaluate", "--pred", str(a), "--truth", str(b), "--out", str(tmp_path)]) == 3
    assert error_of(capsys)["error"] == "DataError"
    assert main(["evaluate", "--pred", str(a), "--truth", str(tmp_path / "none.gwss")]) == 3
