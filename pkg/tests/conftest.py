import numpy as np
import pytest
import torch

from hotspot.data import build_grid, region_embedding
from hotspot.model import ModelConfig
from hotspot.synth import Cluster, GeneratorSpec, generate, generate_pois
from hotspot.training import TrainingConfig

SMALL_MODEL = dict(dim=8, target_dim=8, heads=2, hidden_dim=8, mlp_hidden=16, head_hidden=16, sample_points=3,
                   lags=2, n_time_samples=6, n_space_samples=6, history_days=5.0, ode_steps=1)
FAST_TRAINING = dict(lr=3e-3, epochs_stage1=1, epochs_stage2=1, epochs_stage3=1, batch_size=16, mle_lr=1e-2,
                     intervals_per_day=2, seed=0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def small_model_config():
    return ModelConfig(**SMALL_MODEL)


@pytest.fixture
def fast_training_config():
    return TrainingConfig(**FAST_TRAINING)


def tiny_spec(**kw):
    base = dict(kind="planted-clusters", base_rate=6.0, days=12, height_km=4.0, width_km=4.0,
                types=("theft", "assault"), n_pois=60, seed=3,
                clusters=(Cluster((1.0, 1.0), 0.5, (8.0, 20.0), 5.0, "theft"),))
    base.update(kw)
    return GeneratorSpec(**base)


@pytest.fixture(scope="session")
def tiny_world():
    """A 12-day, two-type planted dataset on a 4x4 km box with PoI features."""
    spec = tiny_spec()
    ds = generate(spec)
    grid = region_embedding(build_grid(spec.bbox, 1.0, SMALL_MODEL["dim"]), generate_pois(spec), seed=0)
    return spec, ds.with_grid(grid), grid


def brute_cell(grid, lat, lon):
    """Cell containing a point by scanning every cell's bounds."""
    lat0, lat1, lon0, lon1 = grid.bbox
    dh = (lat1 - lat0) / grid.rows
    dw = (lon1 - lon0) / grid.cols
    for g in range(grid.n_cells):
        r, c = divmod(g, grid.cols)
        top = lat0 + (r + 1) * dh if r < grid.rows - 1 else lat1 + 1e-12
        right = lon0 + (c + 1) * dw if c < grid.cols - 1 else lon1 + 1e-12
        if lat0 + r * dh <= lat < top and lon0 + c * dw <= lon < right:
            return g
    raise AssertionError("point not in any cell")




@pytest.fixture(scope="session")
def tiny_setup(tiny_world):
    """Training data and an untrained small model for the tiny world."""
    from hotspot.training import build_model, prepare

    _, ds, grid = tiny_world
    mc = ModelConfig(**SMALL_MODEL)
    tc = TrainingConfig(**FAST_TRAINING)
    data, cut = prepare(ds, grid, mc, tc)
    return data, cut, mc, tc


@pytest.fixture
def tiny_model(tiny_world, tiny_setup):
    from hotspot.training import build_model

    _, _, grid = tiny_world
    data, _, mc, _ = tiny_setup
    return build_model(grid, data, mc, seed=0)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props or rep.when != "call" and outcome != "error":
                continue
            status = "PASS" if outcome == "passed" else "FAIL"
            lines[props["criterion"]] = f"criterion {props['criterion']}: {status}  {props.get('detail', '')}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
