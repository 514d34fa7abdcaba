import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from hotspot.checkpoint import load_checkpoint
from hotspot.data import make_dataset
from hotspot.errors import InvalidArgument
from hotspot.model import parameter_digest
from hotspot.training import (TrainingConfig, TrainingLog, build_model, evaluation_intervals, prepare, train_full,
                              train_stage1, train_stage2, train_stage3, training_intervals)


@pytest.fixture
def fresh(tiny_world, small_model_config, fast_training_config):
    _, ds, grid = tiny_world
    data, cut = prepare(ds, grid, small_model_config, fast_training_config)
    model = build_model(grid, data, small_model_config, seed=0)
    return model, data, fast_training_config


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TrainingConfig(epochs_stage2=0)
    with pytest.raises(InvalidArgument):
        TrainingConfig(batch_size=0)
    with pytest.raises(InvalidArgument):
        TrainingConfig(optimizer="lbfgs")
    with pytest.raises(InvalidArgument):
        TrainingConfig(lr=-1.0)
    tc = TrainingConfig(interval_hours=(6.0, 24.0))
    assert TrainingConfig.from_dict(tc.to_dict()) == tc


def test_training_intervals_policy(tiny_world, small_model_config):
    _, ds, grid = tiny_world
    train = ds.subset(ds.day < 10)
    tc = TrainingConfig(intervals_per_day=3)
    iv = training_intervals(train, grid, 10.0, tc, small_model_config, np.random.default_rng(0))
    q = iv.queries
    assert set(np.round(q.length * 24).astype(int)) == {6, 12, 24}
    assert np.allclose(np.round(q.start * 24), q.start * 24)  # whole-hour starts
    assert (q.start + q.length <= 10.0 + 1e-9).all()  # never reaches into held-out days
    assert set(q.type) == {0, 1}
    assert iv.labels.shape == (len(q), grid.n_cells)


def test_evaluation_intervals_cover_every_combination(tiny_world):
    _, ds, grid = tiny_world
    iv = evaluation_intervals(ds, grid, 10, 11, start_hours=(0, 12), hours=(12, 24))
    # 24h from 12:00 on the last day is dropped
    assert len(iv) == (2 * 4 - 1) * ds.n_types


def test_stage1_bookkeeping_on_ten_intervals(fresh):
    model, data, tc = fresh
    data.intervals = type(data.intervals)(data.intervals.queries.subset(np.arange(10)), data.intervals.labels[:10])
    before = parameter_digest(model.theta0() + model.theta2())
    log = TrainingLog()
    trace = train_stage1(model, data, tc, log)
    assert len(trace) == 1 and len(log.records) == 1
    assert set(log.records[0]) == {"stage", "epoch", "loss", "wall_time"}
    assert parameter_digest(model.theta0() + model.theta2()) != before


def test_zero_learning_rate_leaves_parameters(fresh):
    model, data, tc = fresh
    tc = replace(tc, lr=0.0, weight_decay=0.0)
    before = parameter_digest(model.parameters())
    train_stage1(model, data, tc)
    assert parameter_digest(model.parameters()) == before


def test_stage2_freeze_and_one_process_per_type(fresh):
    model, data, tc = fresh
    theta0 = parameter_digest(model.theta0())
    theta1 = [parameter_digest(model.theta1(c)) for c in range(2)]
    report = train_stage2(model, data, tc)
    assert set(report) == {"theft", "assault"} and len(model.processes) == 2
    assert all("trace" in r and len(r["trace"]) == 1 for r in report.values())
    assert parameter_digest(model.theta0()) == theta0
    assert all(parameter_digest(model.theta1(c)) != theta1[c] for c in range(2))
    # the process snapshot matches the context network at stage-2 time
    assert parameter_digest(model.pp_context.parameters()) == theta0


def test_stage2_isolates_failing_type(tiny_world, small_model_config, fast_training_config):
    _, ds, grid = tiny_world
    # a third type with no records: its fit fails, the others train
    ds3 = make_dataset(ds.day, ds.tod, ds.lat, ds.lon, ds.type, ds.types + ("zz_none",), epoch=ds.epoch, grid=grid)
    data, _ = prepare(ds3, grid, small_model_config, fast_training_config)
    model = build_model(grid, data, small_model_config)
    report = train_stage2(model, data, fast_training_config)
    assert "error" in report["zz_none"]
    assert "trace" in report["theft"] and "trace" in report["assault"]


def test_stage3_freezes_processes(fresh):
    model, data, tc = fresh
    train_stage2(model, data, tc)
    theta1 = parameter_digest(model.theta1())
    tc3 = replace(tc, epochs_stage3=2)
    trace = train_stage3(model, data, tc3)
    assert len(trace) == 2
    assert parameter_digest(model.theta1()) == theta1


def test_train_full_checkpoints_and_determinism(tmp_path, tiny_world, small_model_config, fast_training_config):
    _, ds, grid = tiny_world
    a = train_full(ds, grid, small_model_config, fast_training_config, tmp_path / "a")
    b = train_full(ds, grid, small_model_config, fast_training_config, tmp_path / "b")
    assert [p.name for p in a.checkpoints] == ["stage1.pt", "stage2.pt", "stage3.pt"]
    assert parameter_digest(a.model.parameters()) == parameter_digest(b.model.parameters())
    assert a.traces == b.traces
    lines = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    stages = [json.loads(x)["stage"] for x in lines]
    assert stages[0] == "stage1" and stages[-1] == "stage3" and "stage2" in stages
    model, info = load_checkpoint(a.checkpoints[-1])
    assert info["stage"] == 3 and info["extra"]["test_first_day"] == a.test_first_day
    for p, q in zip(model.parameters(), a.model.parameters()):
        assert torch.equal(p, q)


def test_prepare_requires_eight_days(tiny_world, small_model_config, fast_training_config):
    _, ds, grid = tiny_world
    with pytest.raises(InvalidArgument):
        prepare(ds.subset(ds.day < 6), grid, small_model_config, fast_training_config)
