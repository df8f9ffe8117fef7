"""End-to-end checks on the synthetic benchmark; run with ``pytest -m slow``."""

import numpy as np
import pytest

from mvocc.config import SWEEP_GRIDS, parse_config
from mvocc.methods import METHOD_IDS, MethodConfig, OptimizerSettings, score, train
from mvocc.runner import run, sweep

pytestmark = pytest.mark.slow

# 650 positives: 500 train, 150 test, plus 500 negatives
TRAIN_RATIO = 500 / 650
OVERRIDES = {
    "embedding_dim": 8,
    "optimizer": {"epochs": 20, "lr": 5e-3, "batch_size": 128, "pretrain_epochs": 10},
}


def _benchmark(tmp_path, methods, shift=6.0, repeats=1, noise_views=None, seed=0, **kwargs):
    synth = {"name": "bench", "dims": [10, 10], "shift": shift, "seed": seed}
    if noise_views:
        synth["noise_views"] = noise_views
    data = {
        "datasets": [{"synth": synth}],
        "methods": methods,
        "overrides": OVERRIDES,
        "positive_classes": [0],
        "repeats": repeats,
        "train_ratio": TRAIN_RATIO,
        "seed": seed,
        "output_dir": str(tmp_path),
    }
    data.update(kwargs)
    return parse_config(data, env={})


def _auroc(report, method, strategy="AVG"):
    return report["summary"]["bench"][strategy]["auroc"][method]["mean"]


def test_every_method_detects_the_shifted_class(tmp_path):
    report = run(_benchmark(tmp_path, list(METHOD_IDS)), write=False)
    assert report["records"][0]["n_train"] == 500
    assert report["records"][0]["n_test"] == 650
    for method in METHOD_IDS:
        assert _auroc(report, method) >= 0.90, method


def test_unshifted_control_is_chance(tmp_path):
    report = run(_benchmark(tmp_path, list(METHOD_IDS), shift=0.0, repeats=10), write=False)
    for method in METHOD_IDS:
        assert 0.45 <= _auroc(report, method) <= 0.55, method


def test_averaging_beats_max_with_a_noise_view(tmp_path):
    avg, top = [], []
    for seed in range(10):
        config = _benchmark(tmp_path, ["DAE"], shift=3.0, noise_views=[0], seed=seed, late_fusion=["AVG", "MAX"])
        report = run(config, write=False)
        avg.append(_auroc(report, "DAE", "AVG"))
        top.append(_auroc(report, "DAE", "MAX"))
    assert np.mean(avg) >= np.mean(top)


@pytest.mark.parametrize(
    "parameter,methods",
    [("R", ["TF"]), ("m", ["SIM"]), ("alpha", ["DIS", "SIM", "DCCA"])],
)
def test_sweeps_are_stable(parameter, methods, tmp_path):
    result = sweep(_benchmark(tmp_path, methods), parameter, SWEEP_GRIDS[parameter], write=False)
    low, high = SWEEP_GRIDS[parameter][0], SWEEP_GRIDS[parameter][-1]
    for method in methods:
        by_value = {p["value"]: p["auroc_mean"] for p in result["points"] if p["method"] == method}
        assert abs(by_value[high] - by_value[low]) < 0.05, method


def test_constant_data_is_reconstructed():
    views = [np.full((32, 3), 0.5), np.full((32, 2), -0.25)]
    settings = OptimizerSettings(epochs=500, lr=1e-2)
    model = train(MethodConfig(method="DAE", embedding_dim=4, optimizer=settings), views)
    assert model.history[-1] < 1e-3
    assert np.all(score(model, [v[:1] for v in views]) < 1e-3)
