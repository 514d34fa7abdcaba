import json

import pytest
import yaml

from hotspot.cli import main
from hotspot.config import RunConfig, apply_overrides, load_config
from hotspot.errors import ConfigError, InvalidArgument

from conftest import FAST_TRAINING, SMALL_MODEL

SYNTH = {"kind": "planted-clusters", "base_rate": 6, "days": 12, "height_km": 4, "width_km": 4,
         "types": ["theft", "assault"], "n_pois": 40, "seed": 3,
         "clusters": [{"center_km": [1.0, 1.0], "radius_km": 0.5, "hours": [8, 20], "rate": 5, "type": "theft"}]}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else json.loads(err.strip().splitlines()[-1]))


# -- configuration ------------------------------------------------------------


def test_config_round_trip_and_defaults():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.model.dim == 64 and cfg.model.heads == 4 and cfg.model.sample_points == 4
    assert cfg.training.batch_size == 48 and cfg.training.lr == 5e-4 and cfg.training.weight_decay == 5e-5
    assert cfg.evaluation.start_hours == (0.0,) and cfg.evaluation.hours == (24.0,)


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"seed": 3, "model": {"dim": 16, "target_dim": 16}}))
    cfg = load_config(path, ["model.dim=32", "model.target_dim=32", "evaluation.hours=[6, 12]"])
    assert cfg.seed == 3 and cfg.training.seed == 3
    assert cfg.model.dim == 32 and cfg.evaluation.hours == (6.0, 12.0)
    assert apply_overrides({}, ["a.b.c=1"]) == {"a": {"b": {"c": 1}}}


@pytest.mark.parametrize("doc", [{"modle": {}}, {"model": {"dims": 3}}, {"training": {"epochs": 2}},
                                 {"evaluation": {"k": 0}}, {"grid": []},
                                 {"model": {"dim": 6, "heads": 4}}])
def test_bad_configs_rejected(doc):
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict(doc)


def test_unknown_key_and_bad_yaml_exit_2(tmp_path, capsys):
    (tmp_path / "spec.yaml").write_text(yaml.safe_dump(SYNTH))
    code, err = run(capsys, "train", "--events", tmp_path / "none.csv", "--out", tmp_path / "r", "--set", "model.bogus=1")
    assert code == 2 and err["exit_code"] == 2 and err["error"] == "ConfigError"
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n")
    code, err = run(capsys, "train", "--events", tmp_path / "none.csv", "--out", tmp_path / "r", "--config", bad)
    assert code == 2
    assert main(["frobnicate"]) == 2
    assert main(["predict", "--checkpoint", "x"]) == 2  # missing required flags


# -- end-to-end ----------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.yaml").write_text(yaml.safe_dump(SYNTH))
    (root / "run.yaml").write_text(yaml.safe_dump({"seed": 0, "model": SMALL_MODEL,
                                                   "training": {k: v for k, v in FAST_TRAINING.items() if k != "seed"},
                                                   "evaluation": {"hours": [12, 24], "start_hours": [0, 12]}}))
    assert main(["synth", "--spec", str(root / "spec.yaml"), "--out", str(root / "data")]) == 0
    assert main(["train", "--events", str(root / "data" / "events.csv"), "--pois", str(root / "data" / "pois.csv"),
                 "--config", str(root / "run.yaml"), "--out", str(root / "run")]) == 0
    return root


def test_synth_outputs(trained):
    data = trained / "data"
    assert {p.name for p in data.iterdir()} == {"events.csv", "pois.csv", "spec.json"}
    assert data.joinpath("events.csv").read_text().splitlines()[0] == "type,datetime,lat,lon"


def test_train_outputs(trained):
    run_dir = trained / "run"
    for name in ("stage1.pt", "stage2.pt", "stage3.pt", "config.json", "summary.json", "train_log.jsonl",
                 "loss_curves.png"):
        assert (run_dir / name).is_file(), name
    assert json.loads((run_dir / "config.json").read_text())["model"]["dim"] == SMALL_MODEL["dim"]


def test_predict_flexible_interval_single_cell(trained, capsys, tmp_path):
    code, res = run(capsys, "predict", "--checkpoint", trained / "run" / "stage3.pt",
                    "--events", trained / "data" / "events.csv", "--start", "2018-01-12T12:00", "--hours", 8,
                    "--type", "theft", "--grid", 3, "--out", tmp_path)
    assert code == 0 and res["n_cells"] == 1 and res["hours"] == 8
    doc = json.loads((tmp_path / "predictions.json").read_text())
    (rec,) = doc["predictions"]
    assert rec["grid"] == 3 and 0 < rec["probability"] < 1
    assert doc["start"] == "2018-01-12T12:00"


def test_predict_all_cells_writes_matrix(trained, capsys, tmp_path):
    code, res = run(capsys, "predict", "--checkpoint", trained / "run" / "stage3.pt",
                    "--events", trained / "data" / "events.csv", "--start", "2018-01-12T06:00", "--hours", 12,
                    "--type", "assault", "--out", tmp_path)
    assert code == 0
    rows = (tmp_path / "predictions.csv").read_text().splitlines()
    assert len(rows) * len(rows[0].split(",")) == res["n_cells"]


def test_evaluate_and_inspect(trained, capsys, tmp_path):
    code, res = run(capsys, "evaluate", "--checkpoint", trained / "run" / "stage3.pt",
                    "--events", trained / "data" / "events.csv", "--out", tmp_path)
    assert code == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(res) <= set(metrics) and 0 <= metrics["micro_f1"] <= 1
    assert (tmp_path / "heatmaps" / "theft_probability.png").is_file()
    code, info = run(capsys, "inspect", trained / "run" / "stage3.pt")
    assert code == 0 and info["format_version"] == 1 and info["stage"] == 3
    code, info = run(capsys, "inspect", trained / "data" / "events.csv")
    assert code == 0 and set(info["types"]) == {"theft", "assault"}


def test_error_exit_codes(trained, capsys, tmp_path):
    ckpt = trained / "run" / "stage3.pt"
    events = trained / "data" / "events.csv"
    bad = tmp_path / "bad.pt"
    bad.write_bytes(ckpt.read_bytes()[:500])
    code, err = run(capsys, "predict", "--checkpoint", bad, "--events", events, "--start", "2018-01-12T12:00",
                    "--type", "theft", "--out", tmp_path)
    assert code == 4 and err["error"] == "CheckpointError" and "parse" in err["message"]
    code, err = run(capsys, "predict", "--checkpoint", ckpt, "--events", tmp_path / "missing.csv",
                    "--start", "2018-01-12T12:00", "--type", "theft", "--out", tmp_path)
    assert code == 3
    code, err = run(capsys, "predict", "--checkpoint", ckpt, "--events", events, "--start", "2018-01-12T12:00",
                    "--type", "arson", "--out", tmp_path)
    assert code in (2, 3) and "arson" in err["message"]
    code, err = run(capsys, "predict", "--checkpoint", ckpt, "--events", events, "--start", "yesterday",
                    "--type", "theft", "--out", tmp_path)
    assert code == 2
    assert not (tmp_path / "predictions.json").exists()


def test_train_reproducible(trained, capsys, tmp_path):
    # same file name in a different directory: the archive embeds the stem
    assert main(["train", "--events", str(trained / "data" / "events.csv"), "--pois",
                 str(trained / "data" / "pois.csv"), "--config", str(trained / "run.yaml"),
                 "--out", str(tmp_path / "run")]) == 0
    for name in ("stage1.pt", "stage2.pt", "stage3.pt"):
        assert (tmp_path / "run" / name).read_bytes() == (trained / "run" / name).read_bytes()
