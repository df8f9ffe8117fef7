import json

import numpy as np
import pytest

from mvocc.config import parse_config
from mvocc.data import MultiViewDataset, save_dataset
from mvocc.errors import ConfigError, DataError
from mvocc.runner import (
    BEST_SINGLE_VIEW_FILE,
    HINDSIGHT_LABEL,
    SWEEP_FILE,
    best_single_view,
    build_jobs,
    generate,
    load_source,
    positive_classes,
    run,
    sweep,
)
from mvocc.synth import SynthSpec

FAST = {"embedding_dim": 4, "optimizer": {"epochs": 3, "batch_size": 16, "pretrain_epochs": 1}}
SMALL_SYNTH = {"name": "toy", "dims": [6, 6], "n_positive": 60, "n_negative": 30, "seed": 4}


def _config(tmp_path, **kwargs):
    data = {
        "datasets": [{"synth": SMALL_SYNTH}],
        "methods": ["DAE", "SUM"],
        "overrides": FAST,
        "positive_classes": [0],
        "repeats": 2,
        "output_dir": str(tmp_path),
    }
    data.update(kwargs)
    return parse_config(data, env={})


def _duplicate_view_source(tmp_path):
    rng = np.random.default_rng(0)
    view = np.vstack([rng.normal(size=(60, 5)), rng.normal(loc=3.0, size=(30, 5))])
    labels = np.array([0] * 60 + [1] * 30)
    dataset = MultiViewDataset("twins", [view, view.copy()], labels, view_names=["left", "right"])
    save_dataset(dataset, tmp_path / "twins")
    return {"path": str(tmp_path / "twins")}


# ============================================================================
# Job expansion
# ============================================================================


def test_jobs_share_splits_across_methods(tmp_path):
    config = _config(tmp_path, positive_classes=None)
    source = config.datasets[0]
    jobs = build_jobs(config, {"toy": load_source(source)})
    assert len(jobs) == 2 * 2 * 2  # methods x classes x repeats
    assert [j.index for j in jobs] == list(range(8))
    dae = [j.split_seed for j in jobs if j.method == "DAE"]
    total = [j.split_seed for j in jobs if j.method == "SUM"]
    assert dae == total
    assert len({j.train_seed for j in jobs}) == 8


def test_positive_class_selection(tmp_path):
    dataset = load_source(_config(tmp_path).datasets[0])
    direct = _config(tmp_path, protocol="direct", positive_classes=None)
    assert positive_classes(direct, direct.datasets[0], dataset) == [0]
    everything = _config(tmp_path, positive_classes=None)
    assert positive_classes(everything, everything.datasets[0], dataset) == [0, 1]
    bench = _config(tmp_path, positive_classes=None, benchmark_mode=True)
    assert positive_classes(bench, bench.datasets[0], dataset) == []
    missing = _config(tmp_path, positive_classes=[7])
    with pytest.raises(DataError):
        positive_classes(missing, missing.datasets[0], dataset)


def test_duplicate_dataset_names(tmp_path):
    config = _config(tmp_path, datasets=[{"synth": SMALL_SYNTH}, {"synth": SMALL_SYNTH}])
    with pytest.raises(DataError):
        run(config, write=False)


# ============================================================================
# Runs
# ============================================================================


def test_run_aggregates_repeats(tmp_path):
    report = run(_config(tmp_path))
    entry = report["summary"]["toy"]["AVG"]["auroc"]["DAE"]
    assert len(entry["values"]) == 2
    assert entry["mean"] == pytest.approx(np.mean(entry["values"]))
    assert len(report["records"]) == 4
    winner = report["best"]["toy"]["AVG"]["auroc"]
    assert report["summary"]["toy"]["AVG"]["auroc"][winner]["p_value"] == 1.0

    record = report["records"][0]
    assert set(record["metrics"]["AVG"]) == {"auroc", "aupr", "tnr_at_95tpr"}
    assert len(record["per_view_auroc"]) == 2
    assert record["n_train"] == 42

    lines = (tmp_path / "runs.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert {json.loads(line)["index"] for line in lines} == {0, 1, 2, 3}
    assert (tmp_path / "summary.csv").exists()
    assert json.loads((tmp_path / "report.json").read_text())["config_hash"] == report["config_hash"]


def test_run_is_reproducible(tmp_path):
    run(_config(tmp_path / "a"))
    run(_config(tmp_path / "b"))
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_worker_pool_matches_serial(tmp_path):
    serial = run(_config(tmp_path / "serial"), write=False)
    pooled = run(_config(tmp_path / "pooled", jobs=2), write=False)
    assert [r["metrics"] for r in serial["records"]] == [r["metrics"] for r in pooled["records"]]


def test_every_late_fusion_strategy_is_reported(tmp_path):
    report = run(_config(tmp_path, methods=["DAE"], late_fusion=["MAX", "AVG", "MIN"], repeats=1), write=False)
    assert report["primary_late_fusion"] == "MAX"
    assert set(report["summary"]["toy"]) == {"AVG", "MIN", "MAX"}


# ============================================================================
# Sweeps and references
# ============================================================================


def test_rank_sweep_writes_points(tmp_path):
    config = _config(tmp_path, methods=["TF"], repeats=1)
    result = sweep(config, "R", [2, 4])
    assert result["grid"] == [2, 4]
    assert [p["value"] for p in result["points"]] == [2, 4]
    assert (tmp_path / SWEEP_FILE).exists()
    assert (tmp_path / "sweep.csv").exists()


def test_sweep_rejects_inapplicable_parameter(tmp_path):
    with pytest.raises(ConfigError):
        sweep(_config(tmp_path), "m", [1.0])


def test_best_single_view_prefers_informative_view(tmp_path):
    synth = {**SMALL_SYNTH, "noise_views": [0], "shift": 6.0}
    result = best_single_view(_config(tmp_path, datasets=[{"synth": synth}]))
    reference = result["datasets"]["toy"]
    assert result["reference"] == HINDSIGHT_LABEL
    assert reference["best_view"] == 1
    assert reference["best_view_name"] == "view1"
    assert reference["best_auroc"] == max(reference["view_auroc"])
    assert (tmp_path / BEST_SINGLE_VIEW_FILE).exists()


def test_best_single_view_ties_on_duplicate_views(tmp_path):
    result = best_single_view(_config(tmp_path, datasets=[_duplicate_view_source(tmp_path)]), write=False)
    reference = result["datasets"]["twins"]
    assert reference["view_auroc"][0] == reference["view_auroc"][1]
    assert reference["best_view"] == 0


def test_best_single_view_without_qualifying_classes(tmp_path, caplog):
    config = _config(tmp_path, positive_classes=None, benchmark_mode=True)
    with caplog.at_level("WARNING"):
        result = best_single_view(config, write=False)
    assert result["datasets"] == {}
    assert result["records"] == []
    assert "No single-view runs on dataset 'toy'" in caplog.text


def test_generate_reports_oracle(tmp_path):
    summary = generate(SynthSpec(**SMALL_SYNTH), tmp_path / "gen", fmt="binary")
    assert summary["oracle_auroc"] > 0.95
    assert summary["dims"] == [6, 6]
    assert (tmp_path / "gen" / "manifest.json").exists()
