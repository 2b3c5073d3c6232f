import csv
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayrnn import bench
from delayrnn.bench import (
    ExperimentConfig,
    aggregate,
    baselines,
    read_csv,
    replicate_data,
    run_cell,
    run_sweep,
    score_forecasts,
    select_hidden,
    write_csv,
)
from delayrnn.dynamics import preset, previous_value_nrmse, simulate
from delayrnn.embedding import NormalizationStats
from delayrnn.errors import DegenerateSeriesError, DivergedTrainingError
from delayrnn.nets import FnnParams, Model, TrainConfig

LV = preset("lv")
L63 = preset("lorenz63")
FAST = TrainConfig(max_epochs=400, patience=50)


def test_run_cell_deterministic():
    a = run_cell(LV, "rnn", 50, 2, 2, 4, FAST)
    b = run_cell(LV, "rnn", 50, 2, 2, 4, FAST)
    assert a == b
    assert set(a.nrmse) == {1, 2, 3}
    assert all(v >= 0 for v in a.nrmse.values())


def test_select_hidden_singleton():
    out = select_hidden(LV, "fnn", 50, 2, 1, [5], FAST)
    assert out.h == 5


def test_selection_ignores_test_segment():
    series, _ = replicate_data(L63, 30, 7)
    scrambled = series.copy()
    scrambled[30:] = np.random.default_rng(0).permutation(series[30:])
    a = select_hidden(L63, "rnn", 30, 3, 7, range(2, 6), FAST, series=series)
    b = select_hidden(L63, "rnn", 30, 3, 7, range(2, 6), FAST, series=scrambled)
    assert a.h == b.h and a.val_loss == b.val_loss
    assert a.nrmse != b.nrmse


def test_select_hidden_requires_candidates():
    with pytest.raises(ValueError):
        select_hidden(LV, "fnn", 50, 2, 1, [], FAST)


def test_scores_cover_the_continuation():
    series, _ = replicate_data(LV, 40, 3)
    # a constant model scores the same at every horizon: the test targets are series[40:80]
    norm = NormalizationStats.from_series(series[:40])
    p = FnnParams(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    model = Model("fnn", p, norm, 1)
    scores = score_forecasts(model, series, 40, 1, (1, 2, 3), norm)
    const = norm.mean[0]
    expect = np.sqrt(np.mean((series[40:, 0] - const) ** 2)) / norm.std[0]
    for k in (1, 2, 3):
        assert scores[k] == pytest.approx(expect)


def test_baselines():
    x = simulate(L63, 0, 5000).observed
    norm = NormalizationStats.from_series(x)
    mean_b, prev_b = baselines(x, norm)
    assert mean_b == pytest.approx(1.0)
    assert prev_b == pytest.approx(previous_value_nrmse(x))
    with pytest.raises(DegenerateSeriesError):
        baselines(np.ones(10), norm)
    with pytest.raises(ValueError):
        baselines(np.ones(1), norm)


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(replicates=0)
    with pytest.raises(ValueError):
        ExperimentConfig(delays=(9,))
    with pytest.raises(ValueError):
        ExperimentConfig(architectures=("lstm",))
    with pytest.raises(KeyError):
        ExperimentConfig(system="henon")
    cfg = ExperimentConfig(base_seed=10)
    assert [cfg.seed(r) for r in range(3)] == [10, 11, 12]


def test_failed_replicate_is_recorded(monkeypatch):
    def boom(*args, **kwargs):
        raise DivergedTrainingError("nan")

    monkeypatch.setattr(bench, "train", boom)
    cfg = ExperimentConfig("lv", delays=(2,), hidden_sizes=(2,), replicates=2, architectures=("fnn",))
    rows = run_sweep(cfg)
    assert len(rows) == 2 * 3
    assert all(r["status"] == "failed:DivergedTrainingError" for r in rows)
    assert aggregate(rows) == []


def _rows(values, **key):
    base = {"system": "lv", "arch": "rnn", "train_size": 50, "d": 2, "h": 2, "horizon": 1,
            "best_epoch": 1, "selected_h": "", "status": "ok", "seed": 0}
    base.update(key)
    return [dict(base, replicate=i, nrmse=v) for i, v in enumerate(values)]


def test_aggregate_single_replicate():
    (s,) = aggregate(_rows([0.37]))
    assert s["mean_nrmse"] == 0.37 and s["stderr"] == 0.0 and s["single_replicate"] is True


@given(st.lists(st.floats(0, 5), min_size=2, max_size=30), st.randoms())
@settings(max_examples=50)
def test_aggregate_permutation_invariant(values, rnd):
    rows = _rows(values)
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    assert aggregate(rows) == aggregate(shuffled)
    (s,) = aggregate(rows)
    assert s["mean_nrmse"] == pytest.approx(np.mean(values))
    assert s["stderr"] == pytest.approx(np.std(values, ddof=1) / math.sqrt(len(values)), abs=1e-12)


def test_aggregate_mean_selected_h():
    rows = _rows([0.1, 0.2], h="auto")
    rows[0]["selected_h"], rows[1]["selected_h"] = 4, 7
    (s,) = aggregate(rows)
    assert s["mean_selected_h"] == 5.5 and s["h"] == "auto"


def test_stderr_scales_with_replicates():
    cfg = ExperimentConfig("lv", delays=(2,), hidden_sizes=(2,), replicates=20, architectures=("rnn",),
                           horizons=(1,), train=FAST)
    rows = run_sweep(cfg)
    (s20,) = aggregate(rows)
    (s5,) = aggregate([r for r in rows if r["replicate"] < 5])
    ratio = s5["stderr"] / s20["stderr"]
    assert 1.0 <= ratio <= 4.0  # sqrt(20 / 5) = 2, within a factor of two


def test_csv_round_trip(tmp_path):
    rows = _rows([0.25, 0.5])
    path = tmp_path / "r.csv"
    write_csv(rows, path, bench.RESULT_COLUMNS)
    back = read_csv(path)
    assert [float(r["nrmse"]) for r in back] == [0.25, 0.5]
    with open(path) as fh:
        assert next(csv.reader(fh)) == bench.RESULT_COLUMNS


def test_sweep_deterministic_and_pool_independent():
    cfg = ExperimentConfig("lorenz63", train_sizes=(30,), delays=(1, 3), hidden_sizes=(3,), replicates=2,
                           train=FAST)
    a = run_sweep(cfg)
    b = run_sweep(dataclasses.replace(cfg, workers=2))
    assert a == b
    assert len(a) == 2 * 2 * 2 * 3
    assert all(r["status"] == "ok" and r["nrmse"] >= 0 for r in a)


def test_sweep_accepts_custom_spec():
    spec = dataclasses.replace(L63, params={"sigma": 10.0, "rho": 30.0, "beta": 8 / 3})
    cfg = ExperimentConfig(spec, train_sizes=(30,), delays=(2,), hidden_sizes=(2,), replicates=1,
                           architectures=("fnn",), train=FAST)
    rows = run_sweep(cfg)
    assert rows[0]["system"] == "lorenz63" and rows[0]["status"] == "ok"


@pytest.mark.slow
def test_l63_errors_grow_with_horizon_and_beat_mean():
    cfg = ExperimentConfig("lorenz63", train_sizes=(50,), delays=(3,), hidden_sizes=(5,), replicates=20,
                           architectures=("rnn", "fnn"))
    rows = run_sweep(cfg)
    for arch in ("fnn", "rnn"):
        cells = {s["horizon"]: s for s in aggregate(rows) if s["arch"] == arch}
        for k in (2, 3):
            assert cells[k]["mean_nrmse"] >= cells[k - 1]["mean_nrmse"] - cells[k]["stderr"]
        one_step = [r["nrmse"] for r in rows if r["arch"] == arch and r["horizon"] == 1]
        assert np.mean(np.array(one_step) < 1) >= 0.8
