import pandas as pd
import pytest

from mvocc.config import parse_config
from mvocc.reports import BEST_MARK, TIED_MARK, aggregate, build_report, summary_frame, write_report

AUROCS = {
    "SUM": [0.90, 0.91, 0.92],
    "TF": [0.89, 0.90, 0.91],
    "DAE": [0.60, 0.61, 0.59],
}


@pytest.fixture
def config(tmp_path):
    data = {
        "datasets": [{"name": "toy", "synth": {}}],
        "methods": list(AUROCS),
        "repeats": 3,
        "output_dir": str(tmp_path),
    }
    return parse_config(data, env={})


@pytest.fixture
def records():
    rows = []
    for method, values in AUROCS.items():
        for repeat, value in enumerate(values):
            for positive in (0, 1):
                # class 1 sits 0.02 above class 0, so the per-repeat mean is value + 0.01
                shifted = value + 0.02 * positive
                rows.append(
                    {
                        "index": len(rows),
                        "dataset": "toy",
                        "method": method,
                        "positive_class": positive,
                        "repeat": repeat,
                        "metrics": {"AVG": {"auroc": shifted, "aupr": shifted, "tnr_at_95tpr": shifted}},
                    }
                )
    return rows


def test_per_repeat_values_average_classes(config, records):
    summary = aggregate(config, records)["summary"]
    values = summary["toy"]["AVG"]["auroc"]["SUM"]["values"]
    assert values == pytest.approx([0.91, 0.92, 0.93])


def test_best_and_p_values(config, records):
    result = aggregate(config, records)
    auroc = result["summary"]["toy"]["AVG"]["auroc"]
    assert result["best"]["toy"]["AVG"]["auroc"] == "SUM"
    assert auroc["SUM"]["best"] and auroc["SUM"]["p_value"] == 1.0
    assert auroc["TF"]["p_value"] > 0.05
    assert auroc["DAE"]["p_value"] < 0.01


def test_summary_marks(config, records):
    frame = summary_frame(build_report(config, records))
    auroc = frame[frame["metric"] == "auroc"].set_index("method")
    assert auroc.loc["SUM", "toy"].endswith(BEST_MARK)
    assert auroc.loc["TF", "toy"].endswith(TIED_MARK)
    assert not auroc.loc["DAE", "toy"].endswith((BEST_MARK, TIED_MARK))
    assert auroc.loc["SUM", "toy p"] == "1.0000"
    assert list(frame["method"][:3]) == ["SUM", "TF", "DAE"]


def test_report_files(config, records, tmp_path):
    paths = write_report(build_report(config, records, note="extra"), tmp_path)
    assert paths["report"].read_text().endswith("}\n")
    frame = pd.read_csv(paths["summary"], keep_default_na=False)
    assert list(frame.columns) == ["metric", "method", "toy", "toy p"]
    assert len(frame) == 3 * 3
