"""Experiment runner: job expansion, worker pool, result sink, sweeps and references."""

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .config import DatasetSource, ExperimentConfig, config_hash, sweep_configs
from .data import (
    MultiViewDataset,
    load_dataset,
    normalize_apply,
    normalize_fit,
    one_vs_all_split,
    qualified_classes,
    save_dataset,
    view_summary,
)
from .errors import DataError
from .evaluation import auroc, detection_metrics, late_fuse
from .methods import train, score
from .reports import RUNS_FILE, build_report, summary_frame, write_json, write_report
from .synth import POSITIVE_LABEL, SynthSpec, distance_to_mean_scores, synth_generate
from .tensor import Rng, derive_seed

logger = logging.getLogger(__name__)

HINDSIGHT_LABEL = "hindsight reference"
SWEEP_FILE = "sweep.json"
SWEEP_SUMMARY_FILE = "sweep.csv"
BEST_SINGLE_VIEW_FILE = "best_single_view.json"


@dataclass(frozen=True)
class Job:
    """One method x dataset x positive class x repeat experiment."""

    index: int
    dataset: str
    method: str
    positive_class: int
    repeat: int
    split_seed: int
    train_seed: int


# ============================================================================
# Job expansion
# ============================================================================


def load_source(source: DatasetSource) -> MultiViewDataset:
    if source.synth is not None:
        dataset = synth_generate(source.synth)
    else:
        dataset = load_dataset(source.path)
    if source.name:
        dataset.name = source.name
    return dataset


def positive_classes(
    config: ExperimentConfig, source: DatasetSource, dataset: MultiViewDataset
) -> List[int]:
    """
    Positive classes evaluated on a dataset.

    A per-dataset override wins, then the experiment-wide list. The direct protocol uses
    the lowest label; one-vs-all uses every class, or in benchmark mode the first ten
    classes with more than 300 training rows.
    """
    if source.classes:
        chosen = list(source.classes)
    elif config.positive_classes:
        chosen = list(config.positive_classes)
    elif config.protocol == "direct":
        chosen = [dataset.classes[0]]
    elif config.benchmark_mode:
        chosen = qualified_classes(dataset, config.train_ratio)
    else:
        chosen = dataset.classes
    missing = [c for c in chosen if c not in dataset.classes]
    if missing:
        raise DataError(f"Classes {missing} not present in dataset '{dataset.name}'")
    if not chosen:
        logger.warning(f"No positive classes qualify on dataset '{dataset.name}'")
    return chosen


def build_jobs(config: ExperimentConfig, datasets: Dict[str, MultiViewDataset]) -> List[Job]:
    """
    Expand a config into jobs with stable indices.

    Splits depend on (dataset, class, repeat) only, so every method sees the same splits;
    training seeds derive from the base seed and the job index.
    """
    jobs = []
    for source in config.datasets:
        dataset = datasets[source.label]
        classes = positive_classes(config, source, dataset)
        for method in config.methods:
            for positive in classes:
                for repeat in range(config.repeats):
                    index = len(jobs)
                    jobs.append(
                        Job(
                            index=index,
                            dataset=source.label,
                            method=method,
                            positive_class=int(positive),
                            repeat=repeat,
                            split_seed=derive_seed(config.seed, "split", source.label, positive, repeat),
                            train_seed=derive_seed(config.seed, index),
                        )
                    )
    return jobs


# ============================================================================
# Execution
# ============================================================================


def _prepare(job: Job, config: ExperimentConfig, dataset: MultiViewDataset):
    split = one_vs_all_split(dataset, job.positive_class, config.train_ratio, Rng(job.split_seed))
    stats = normalize_fit(split.train_views)
    train_views = normalize_apply(stats, split.train_views)
    return split, stats, train_views, normalize_apply(stats, split.test_views)


def execute_job(job: Job, config: ExperimentConfig, dataset: MultiViewDataset) -> Dict[str, object]:
    """
    split -> normalize -> train -> score -> late-fuse -> metrics for one job.

    Returns:
        Run record (JSON-serializable)
    """
    start = time.perf_counter()
    split, stats, train_views, test_views = _prepare(job, config, dataset)
    method_config = config.method_config(job.method, seed=job.train_seed)
    model = train(method_config, train_views, stats)
    scores = score(model, test_views)

    metrics = {
        strategy: detection_metrics(late_fuse(strategy, scores), split.test_labels)
        for strategy in config.late_fusion
    }
    per_view = [auroc(scores[:, v], split.test_labels) for v in range(scores.shape[1])]
    elapsed = time.perf_counter() - start
    primary = config.late_fusion[0]
    logger.info(
        f"Job {job.index} {job.method} on {job.dataset} class {job.positive_class} "
        f"repeat {job.repeat}: AUROC ({primary}) {metrics[primary]['auroc']:.4f} in {elapsed:.1f}s"
    )
    return {
        **asdict(job),
        "config_hash": config_hash(config),
        "seed": job.train_seed,
        "n_train": int(split.train_rows.size),
        "n_test": int(split.test_rows.size),
        "metrics": metrics,
        "per_view_auroc": per_view,
        "final_loss": model.history[-1],
        "wall_clock": elapsed,
    }


def execute_single_view_job(
    job: Job, config: ExperimentConfig, dataset: MultiViewDataset
) -> Dict[str, object]:
    """
    Train one single-view model per view on the job's split, all with the job's seed.

    Identical views therefore get identical models and AUROCs.
    """
    start = time.perf_counter()
    split, stats, train_views, test_views = _prepare(job, config, dataset)
    method_config = config.method_config(job.method, seed=job.train_seed)
    per_view = []
    for train_view, test_view in zip(train_views, test_views):
        model = train(method_config, [train_view])
        per_view.append(auroc(score(model, [test_view])[:, 0], split.test_labels))
    elapsed = time.perf_counter() - start
    logger.info(
        f"Job {job.index} single-view {job.method} on {job.dataset} class {job.positive_class} "
        f"repeat {job.repeat}: view AUROCs {[round(a, 4) for a in per_view]}"
    )
    return {
        **asdict(job),
        "config_hash": config_hash(config),
        "seed": job.train_seed,
        "per_view_auroc": per_view,
        "wall_clock": elapsed,
    }


Task = Callable[[Job, ExperimentConfig, MultiViewDataset], Dict[str, object]]

_WORKER_STATE: Dict[str, object] = {}


def _init_worker(config: ExperimentConfig, datasets: Dict[str, MultiViewDataset], task: Task) -> None:
    _WORKER_STATE["config"] = config
    _WORKER_STATE["datasets"] = datasets
    _WORKER_STATE["task"] = task


def _run_in_worker(job: Job) -> Dict[str, object]:
    task = _WORKER_STATE["task"]
    return task(job, _WORKER_STATE["config"], _WORKER_STATE["datasets"][job.dataset])


def execute_jobs(
    jobs: List[Job],
    config: ExperimentConfig,
    datasets: Dict[str, MultiViewDataset],
    sink: Optional[Path] = None,
    task: Task = execute_job,
) -> List[Dict[str, object]]:
    """
    Run jobs on ``config.jobs`` workers; records come back ordered by job index.

    Finished records are appended to ``sink`` (one JSON object per line) by this process.
    """
    records = []

    def collect(record):
        records.append(record)
        if sink is not None:
            with sink.open("a") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")

    if config.jobs <= 1 or len(jobs) <= 1:
        for job in jobs:
            collect(task(job, config, datasets[job.dataset]))
    else:
        workers = min(config.jobs, len(jobs))
        logger.info(f"Running {len(jobs)} jobs on {workers} workers")
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(config, datasets, task)
        ) as pool:
            futures = [pool.submit(_run_in_worker, job) for job in jobs]
            for future in as_completed(futures):
                collect(future.result())
    return sorted(records, key=lambda r: r["index"])


def _load_all(config: ExperimentConfig) -> Dict[str, MultiViewDataset]:
    datasets = {}
    for source in config.datasets:
        if source.label in datasets:
            raise DataError(f"Duplicate dataset name '{source.label}'")
        datasets[source.label] = load_source(source)
    return datasets


def run(config: ExperimentConfig, write: bool = True) -> Dict[str, object]:
    """
    Run every method x class x repeat job of an experiment.

    Args:
        config: Experiment configuration
        write: Write report.json, summary.csv and runs.jsonl to ``config.output_dir``

    Returns:
        Report dict (per-run records, per-method mean/std/p-values, best performers)
    """
    datasets = _load_all(config)
    jobs = build_jobs(config, datasets)
    logger.info(f"Experiment {config_hash(config)[:12]}: {len(jobs)} jobs over {len(datasets)} dataset(s)")

    sink = None
    if write:
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sink = out_dir / RUNS_FILE
        sink.write_text("")
    records = execute_jobs(jobs, config, datasets, sink)
    report = build_report(
        config, records, datasets={name: view_summary(ds) for name, ds in datasets.items()}
    )
    if write:
        write_report(report, config.output_dir)
    return report


def sweep(
    config: ExperimentConfig, parameter: str, grid: List[float], write: bool = True
) -> Dict[str, object]:
    """
    One run per grid value; returns metric-vs-value points.

    Raises:
        ConfigError: If the parameter does not apply to every configured method
    """
    configs = sweep_configs(config, parameter, grid)
    primary = config.late_fusion[0]
    points = []
    for value, value_config in configs:
        logger.info(f"Sweep {parameter}={value}")
        report = run(value_config, write=False)
        for dataset, by_strategy in report["summary"].items():
            for method, entry in by_strategy[primary]["auroc"].items():
                points.append(
                    {
                        "parameter": parameter,
                        "value": value,
                        "dataset": dataset,
                        "method": method,
                        "auroc_mean": entry["mean"],
                        "auroc_std": entry["std"],
                        "values": entry["values"],
                    }
                )
    result = {
        "parameter": parameter,
        "grid": [value for value, _ in configs],
        "late_fusion": primary,
        "config_hash": config_hash(config),
        "points": points,
    }
    if write:
        out_dir = Path(config.output_dir)
        write_json(result, out_dir / SWEEP_FILE)
        frame = pd.DataFrame([{k: v for k, v in p.items() if k != "values"} for p in points])
        frame.to_csv(out_dir / SWEEP_SUMMARY_FILE, index=False)
        logger.info(f"Wrote {out_dir / SWEEP_FILE}")
    return result


def best_single_view(config: ExperimentConfig, write: bool = True) -> Dict[str, object]:
    """
    Train per-view DAEs and report every view's AUROC and the maximum.

    The maximum is chosen on test data, so it is only a hindsight reference.
    """
    data = config.model_dump(mode="json")
    data["methods"] = ["DAE"]
    data["per_method"] = {k: v for k, v in data["per_method"].items() if k == "DAE"}
    dae_config = ExperimentConfig.model_validate(data)
    datasets = _load_all(dae_config)
    records = execute_jobs(
        build_jobs(dae_config, datasets), dae_config, datasets, task=execute_single_view_job
    )

    references = {}
    for name, dataset in datasets.items():
        per_view = np.array([r["per_view_auroc"] for r in records if r["dataset"] == name])
        if per_view.size == 0:
            logger.warning(f"No single-view runs on dataset '{name}', skipping its reference")
            continue
        means = per_view.mean(axis=0)
        best = int(np.argmax(means))
        references[name] = {
            "view_names": dataset.view_names,
            "view_auroc": [float(m) for m in means],
            "view_auroc_std": (
                [float(s) for s in per_view.std(axis=0, ddof=1)] if len(per_view) > 1 else None
            ),
            "best_view": best,
            "best_view_name": dataset.view_names[best],
            "best_auroc": float(means[best]),
        }
        logger.info(f"Best single view on '{name}': {dataset.view_names[best]} with AUROC {means[best]:.4f}")
    result = {
        "reference": HINDSIGHT_LABEL,
        "note": "best view selected on test data",
        "config_hash": config_hash(dae_config),
        "datasets": references,
        "records": records,
    }
    if write:
        write_json(result, Path(config.output_dir) / BEST_SINGLE_VIEW_FILE)
    return result


def generate(
    spec: SynthSpec, out_dir: Union[str, Path], fmt: str = "csv", ratio: float = 0.7
) -> Dict[str, object]:
    """
    Generate and save a synthetic dataset, reporting its nearest-mean oracle AUROC.
    """
    dataset = synth_generate(spec)
    manifest = save_dataset(dataset, out_dir, fmt)
    split = one_vs_all_split(dataset, POSITIVE_LABEL, ratio, Rng(spec.seed))
    stats = normalize_fit(split.train_views)
    scores = distance_to_mean_scores(
        normalize_apply(stats, split.train_views), normalize_apply(stats, split.test_views)
    )
    oracle = auroc(late_fuse("AVG", scores), split.test_labels)
    logger.info(f"Wrote {manifest}; nearest-mean oracle AUROC {oracle:.4f}")
    return {"manifest": str(manifest), "oracle_auroc": oracle, **view_summary(dataset)}


def summary_table(report: Dict[str, object]) -> str:
    return summary_frame(report).to_string(index=False)
