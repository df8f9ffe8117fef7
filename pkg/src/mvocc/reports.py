"""Aggregation of per-job records into report.json and the summary.csv table."""

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .config import ExperimentConfig, config_hash
from .evaluation import METRICS, SIGNIFICANCE_LEVEL, MetricsReport, compare_to_best

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.csv"
RUNS_FILE = "runs.jsonl"

BEST_MARK = "*"
TIED_MARK = "~"


def _per_repeat(
    records: Iterable[Mapping], dataset: str, method: str, strategy: str, metric: str
) -> List[float]:
    """Metric per repeat, averaged over positive classes (the one-vs-all average)."""
    by_repeat: Dict[int, List[float]] = defaultdict(list)
    for record in records:
        if record["dataset"] == dataset and record["method"] == method:
            by_repeat[record["repeat"]].append(record["metrics"][strategy][metric])
    return [float(np.mean(by_repeat[r])) for r in sorted(by_repeat)]


def aggregate(config: ExperimentConfig, records: Sequence[Mapping]) -> Dict[str, Dict]:
    """
    Mean, std and p-value vs the best performer for every dataset/strategy/metric/method.

    Returns:
        {"summary": ..., "best": ...} where summary[dataset][strategy][metric][method] is a
        metrics dict and best[dataset][strategy][metric] names the best mean performer
    """
    datasets = sorted({r["dataset"] for r in records})
    summary: Dict[str, Dict] = {}
    best: Dict[str, Dict] = {}
    for dataset in datasets:
        summary[dataset], best[dataset] = {}, {}
        present = {r["method"] for r in records if r["dataset"] == dataset}
        methods = [m for m in config.methods if m in present]
        for strategy in config.late_fusion:
            summary[dataset][strategy], best[dataset][strategy] = {}, {}
            for metric in METRICS:
                reports = {
                    method: MetricsReport(metric, _per_repeat(records, dataset, method, strategy, metric))
                    for method in methods
                }
                winner = compare_to_best(reports)
                best[dataset][strategy][metric] = winner
                summary[dataset][strategy][metric] = {
                    method: {**report.to_dict(), "best": method == winner}
                    for method, report in reports.items()
                }
    return {"summary": summary, "best": best}


def build_report(config: ExperimentConfig, records: Sequence[Mapping], **extra) -> Dict[str, object]:
    ordered = sorted(records, key=lambda r: r["index"])
    report = {
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "primary_late_fusion": config.late_fusion[0],
        "records": ordered,
        **aggregate(config, ordered),
    }
    report.update(extra)
    return report


def _cell(entry: Mapping) -> str:
    text = f"{entry['mean']:.4f}±{entry['std']:.4f}"
    if entry["best"]:
        return text + BEST_MARK
    if entry["p_value"] is not None and entry["p_value"] >= SIGNIFICANCE_LEVEL:
        return text + TIED_MARK
    return text


def summary_frame(report: Mapping, strategy: Optional[str] = None) -> pd.DataFrame:
    """
    Methods x datasets table of mean±std with p-values against each column's best.

    The best performer is marked ``*``; methods not significantly worse (p >= 0.05) ``~``.
    """
    strategy = strategy or report["primary_late_fusion"]
    methods = report["config"]["methods"]
    datasets = sorted(report["summary"])
    rows = []
    for metric in METRICS:
        for method in methods:
            row = {"metric": metric, "method": method}
            for dataset in datasets:
                entry = report["summary"][dataset][strategy][metric].get(method)
                if entry is None:
                    row[dataset], row[f"{dataset} p"] = "", ""
                    continue
                row[dataset] = _cell(entry)
                row[f"{dataset} p"] = "" if entry["p_value"] is None else f"{entry['p_value']:.4f}"
            rows.append(row)
    return pd.DataFrame(rows)


def write_report(
    report: Mapping, out_dir: Union[str, Path], name: str = REPORT_FILE
) -> Dict[str, Path]:
    """Write report.json (sorted keys) and summary.csv; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / name
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    summary_path = out_dir / SUMMARY_FILE
    summary_frame(report).to_csv(summary_path, index=False)
    logger.info(f"Wrote {report_path} and {summary_path}")
    return {"report": report_path, "summary": summary_path}


def write_json(payload: Mapping, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
